#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnli/corpus.hpp"
#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

struct Prediction {
    std::string uuid;
    std::string raw_output;
    std::optional<Label> extracted;
};

// whichever label keyword appears last in the generation wins
inline std::optional<Label> extract_label(const std::string& raw_output) {
    std::string low = to_lower(raw_output);
    size_t ent = low.rfind("entailment");
    size_t con = low.rfind("contradiction");
    if (ent == std::string::npos && con == std::string::npos) return std::nullopt;
    if (con == std::string::npos) return Label::Entailment;
    if (ent == std::string::npos) return Label::Contradiction;
    return ent > con ? Label::Entailment : Label::Contradiction;
}

struct ConfusionCounts {
    int tp = 0, fp = 0, fn = 0, tn = 0;
    int unparsed = 0; // predictions with no extractable label
};

struct F1Result {
    double f1 = 0.0;
    ConfusionCounts counts;
};

inline F1Result f1_score(const std::vector<Prediction>& predictions,
                         const std::map<std::string, Label>& golds,
                         Label positive = Label::Entailment) {
    F1Result r;
    for (const auto& pred : predictions) {
        auto git = golds.find(pred.uuid);
        if (git == golds.end()) throw MissingGold("no gold label for uuid " + pred.uuid);
        bool gold_pos = git->second == positive;
        if (!pred.extracted) ++r.counts.unparsed;
        bool pred_pos = pred.extracted && *pred.extracted == positive;
        if (pred_pos && gold_pos) ++r.counts.tp;
        else if (pred_pos && !gold_pos) ++r.counts.fp;
        else if (!pred_pos && gold_pos) ++r.counts.fn;
        else ++r.counts.tn;
    }
    int denom = 2 * r.counts.tp + r.counts.fp + r.counts.fn;
    r.f1 = denom == 0 ? 0.0 : 2.0 * r.counts.tp / denom;
    return r;
}

inline double macro_f1(const std::vector<Prediction>& predictions,
                       const std::map<std::string, Label>& golds) {
    return 0.5 * (f1_score(predictions, golds, Label::Entailment).f1 +
                  f1_score(predictions, golds, Label::Contradiction).f1);
}

struct LineageCounts {
    int altering = 0;
    int preserving = 0;
    int contrast_set = 0; // altered instances whose base was predicted correctly
};

namespace detail {
inline std::map<std::string, const Prediction*> index_predictions(
    const std::vector<Prediction>& predictions) {
    std::map<std::string, const Prediction*> by_uuid;
    for (const auto& p : predictions) by_uuid[p.uuid] = &p;
    return by_uuid;
}
} // namespace detail

// fraction of label-altering interventions answered correctly, restricted to
// those whose un-intervened base was answered correctly
inline double faithfulness(const std::vector<Prediction>& predictions,
                           const std::map<std::string, Label>& golds,
                           const std::map<std::string, InterventionMeta>& lineage,
                           LineageCounts* counts = nullptr) {
    auto by_uuid = detail::index_predictions(predictions);
    int n_altering = 0, in_set = 0, correct = 0;
    for (const auto& pred : predictions) {
        auto lit = lineage.find(pred.uuid);
        if (lit == lineage.end() || lit->second.kind != InterventionKind::Altering) continue;
        ++n_altering;
        auto bit = by_uuid.find(lit->second.base_uuid);
        if (bit == by_uuid.end())
            throw MissingLineage("no prediction for base uuid " + lit->second.base_uuid);
        auto bg = golds.find(lit->second.base_uuid);
        if (bg == golds.end()) throw MissingGold("no gold for base uuid " + lit->second.base_uuid);
        bool base_correct = bit->second->extracted && *bit->second->extracted == bg->second;
        if (!base_correct) continue;
        ++in_set;
        auto g = golds.find(pred.uuid);
        if (g == golds.end()) throw MissingGold("no gold for uuid " + pred.uuid);
        if (pred.extracted && *pred.extracted == g->second) ++correct;
    }
    if (n_altering == 0) throw MissingLineage("split carries no altering interventions");
    if (in_set == 0) throw EmptyContrastSet("no altered instance has a correct base prediction");
    if (counts) {
        counts->altering = n_altering;
        counts->contrast_set = in_set;
    }
    return static_cast<double>(correct) / in_set;
}

// fraction of label-preserving interventions whose prediction matches the base
// prediction; an unparseable side counts as inconsistent
inline double consistency(const std::vector<Prediction>& predictions,
                          const std::map<std::string, InterventionMeta>& lineage,
                          LineageCounts* counts = nullptr) {
    auto by_uuid = detail::index_predictions(predictions);
    int n_preserving = 0, stable = 0;
    for (const auto& pred : predictions) {
        auto lit = lineage.find(pred.uuid);
        if (lit == lineage.end() || lit->second.kind != InterventionKind::Preserving) continue;
        ++n_preserving;
        auto bit = by_uuid.find(lit->second.base_uuid);
        if (bit == by_uuid.end())
            throw MissingLineage("no prediction for base uuid " + lit->second.base_uuid);
        if (pred.extracted && bit->second->extracted &&
            *pred.extracted == *bit->second->extracted)
            ++stable;
    }
    if (n_preserving == 0) throw EmptyPreservingSet("split carries no preserving interventions");
    if (counts) counts->preserving = n_preserving;
    return static_cast<double>(stable) / n_preserving;
}

struct MetricReport {
    double f1 = 0.0;
    std::optional<double> faithfulness;
    std::optional<double> consistency;
    std::optional<double> average;
    ConfusionCounts confusion;
    LineageCounts lineage;

    // the Avg. column exists only when all three metrics do
    void finalize() {
        if (faithfulness && consistency)
            average = (f1 + *faithfulness + *consistency) / 3.0;
        else
            average = std::nullopt;
    }

    static MetricReport from_values(double f1_value, std::optional<double> faith,
                                    std::optional<double> con) {
        MetricReport r;
        r.f1 = f1_value;
        r.faithfulness = faith;
        r.consistency = con;
        r.finalize();
        return r;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["f1"] = f1;
        j["faithfulness"] = faithfulness ? nlohmann::json(*faithfulness) : nlohmann::json();
        j["consistency"] = consistency ? nlohmann::json(*consistency) : nlohmann::json();
        j["average"] = average ? nlohmann::json(*average) : nlohmann::json();
        j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp},
                          {"fn", confusion.fn}, {"tn", confusion.tn},
                          {"unparsed", confusion.unparsed}};
        j["lineage"] = {{"altering", lineage.altering},
                        {"preserving", lineage.preserving},
                        {"contrast_set", lineage.contrast_set}};
        return j;
    }
};

inline MetricReport report(const std::vector<Prediction>& predictions,
                           const std::map<std::string, Label>& golds,
                           const std::map<std::string, InterventionMeta>& lineage,
                           bool macro = false) {
    MetricReport r;
    auto binary = f1_score(predictions, golds, Label::Entailment);
    r.confusion = binary.counts;
    r.f1 = macro ? macro_f1(predictions, golds) : binary.f1;
    try {
        r.faithfulness = faithfulness(predictions, golds, lineage, &r.lineage);
    } catch (const MissingLineage&) {
    }
    try {
        r.consistency = consistency(predictions, lineage, &r.lineage);
    } catch (const EmptyPreservingSet&) {
    }
    r.finalize();
    return r;
}

// predictions persisted as one JSON object per line
inline std::string predictions_to_jsonl(const std::vector<Prediction>& predictions) {
    std::string out;
    for (const auto& p : predictions) {
        nlohmann::json j;
        j["uuid"] = p.uuid;
        j["raw_output"] = p.raw_output;
        j["extracted"] = p.extracted ? nlohmann::json(label_name(*p.extracted)) : nlohmann::json();
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<Prediction> predictions_from_jsonl(const std::string& text) {
    std::vector<Prediction> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        Prediction p;
        p.uuid = j.at("uuid").get<std::string>();
        p.raw_output = j.at("raw_output").get<std::string>();
        if (!j.at("extracted").is_null())
            p.extracted = parse_label(j.at("extracted").get<std::string>());
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace ctnli
