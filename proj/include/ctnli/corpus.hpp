#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

enum class SectionId { Eligibility, Intervention, Results, AdverseEvents };

constexpr std::array<SectionId, 4> kAllSections = {
    SectionId::Eligibility, SectionId::Intervention,
    SectionId::Results, SectionId::AdverseEvents};

inline std::string section_name(SectionId s) {
    switch (s) {
        case SectionId::Eligibility:   return "Eligibility";
        case SectionId::Intervention:  return "Intervention";
        case SectionId::Results:       return "Results";
        case SectionId::AdverseEvents: return "Adverse Events";
    }
    throw Error("unreachable section id");
}

inline SectionId parse_section(const std::string& s) {
    for (SectionId id : kAllSections)
        if (s == section_name(id)) return id;
    throw UnknownSection("unknown section: " + s);
}

enum class Label { Entailment, Contradiction };

inline std::string label_name(Label l) {
    return l == Label::Entailment ? "Entailment" : "Contradiction";
}

inline Label parse_label(const std::string& s) {
    if (s == "Entailment") return Label::Entailment;
    if (s == "Contradiction") return Label::Contradiction;
    throw UnknownLabel("unknown label: " + s);
}

enum class SampleType { Single, Comparison };
enum class Split { Train, Dev, Test };

inline std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Dev:   return "dev";
        case Split::Test:  return "test";
    }
    throw Error("unreachable split");
}

struct TrialRecord {
    std::string trial_id;
    std::map<SectionId, std::vector<std::string>> sections;
};

enum class InterventionKind { Preserving, Altering };

struct InterventionMeta {
    std::string base_uuid;
    InterventionKind kind = InterventionKind::Preserving;
};

struct Instance {
    std::string uuid;
    SampleType sample_type = SampleType::Single;
    SectionId section_id = SectionId::Eligibility;
    std::string primary_id;
    std::optional<std::string> secondary_id;
    std::string statement;
    std::optional<Label> gold;
    std::optional<InterventionMeta> intervention;
};

struct Evidence {
    std::string rendered;
    std::vector<std::string> source_ids;
};

using TrialMap = std::map<std::string, TrialRecord>;

// One JSON document per trial, keyed by the four section names plus
// "Clinical Trial ID".  Unknown section keys are rejected.
inline TrialRecord parse_trial(const nlohmann::json& doc, const std::string& origin) {
    if (!doc.is_object()) throw MalformedFile(origin + ": trial document is not an object");
    TrialRecord rec;
    if (!doc.contains("Clinical Trial ID") || !doc["Clinical Trial ID"].is_string())
        throw MalformedFile(origin + ": missing \"Clinical Trial ID\"");
    rec.trial_id = doc["Clinical Trial ID"].get<std::string>();
    if (rec.trial_id.empty()) throw MalformedFile(origin + ": empty trial id");
    for (auto& [key, value] : doc.items()) {
        if (key == "Clinical Trial ID") continue;
        SectionId sid;
        try {
            sid = parse_section(key);
        } catch (const UnknownSection&) {
            throw UnknownSection(origin + ": unknown section key \"" + key + "\"");
        }
        if (!value.is_array())
            throw MalformedFile(origin + ": section \"" + key + "\" is not an array");
        std::vector<std::string> lines;
        for (const auto& line : value) {
            if (!line.is_string())
                throw MalformedFile(origin + ": non-string line in section \"" + key + "\"");
            lines.push_back(line.get<std::string>());
        }
        rec.sections[sid] = std::move(lines);
    }
    for (SectionId sid : kAllSections)
        if (!rec.sections.count(sid))
            throw MissingSection(origin + ": trial " + rec.trial_id +
                                 " lacks section \"" + section_name(sid) + "\"");
    return rec;
}

inline TrialMap load_trials(const std::filesystem::path& directory) {
    TrialMap trials;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_file(file));
        } catch (const nlohmann::json::parse_error& e) {
            throw MalformedFile(file.string() + ": " + e.what());
        }
        TrialRecord rec = parse_trial(doc, file.string());
        if (trials.count(rec.trial_id))
            throw DuplicateTrialId("duplicate trial id " + rec.trial_id + " in " + file.string());
        trials.emplace(rec.trial_id, std::move(rec));
    }
    return trials;
}

inline Instance parse_instance(const std::string& uuid, const nlohmann::json& fields) {
    if (!fields.is_object()) throw MalformedFile("instance " + uuid + " is not an object");
    Instance inst;
    inst.uuid = uuid;
    std::string type = fields.value("Type", "");
    if (type == "Single") inst.sample_type = SampleType::Single;
    else if (type == "Comparison") inst.sample_type = SampleType::Comparison;
    else throw MalformedFile("instance " + uuid + ": unknown Type \"" + type + "\"");
    if (!fields.contains("Section_id"))
        throw UnknownSection("instance " + uuid + ": missing Section_id");
    inst.section_id = parse_section(fields["Section_id"].get<std::string>());
    if (!fields.contains("Primary_id") || fields["Primary_id"].get<std::string>().empty())
        throw MissingPrimaryId("instance " + uuid + ": missing Primary_id");
    inst.primary_id = fields["Primary_id"].get<std::string>();
    if (fields.contains("Secondary_id") && !fields["Secondary_id"].is_null())
        inst.secondary_id = fields["Secondary_id"].get<std::string>();
    if (inst.sample_type == SampleType::Comparison && !inst.secondary_id)
        throw MalformedFile("instance " + uuid + ": Comparison without Secondary_id");
    if (inst.sample_type == SampleType::Single && inst.secondary_id)
        throw MalformedFile("instance " + uuid + ": Single with Secondary_id");
    inst.statement = fields.value("Statement", "");
    if (fields.contains("Label") && !fields["Label"].is_null())
        inst.gold = parse_label(fields["Label"].get<std::string>());
    if (fields.contains("Base_uuid") && !fields["Base_uuid"].is_null()) {
        InterventionMeta meta;
        meta.base_uuid = fields["Base_uuid"].get<std::string>();
        std::string kind = fields.value("Intervention_kind", "");
        if (kind == "Preserving") meta.kind = InterventionKind::Preserving;
        else if (kind == "Altering") meta.kind = InterventionKind::Altering;
        else throw MalformedFile("instance " + uuid + ": unknown Intervention_kind \"" + kind + "\"");
        inst.intervention = meta;
    }
    return inst;
}

inline nlohmann::json instance_to_json(const Instance& inst) {
    nlohmann::json j;
    j["Type"] = inst.sample_type == SampleType::Single ? "Single" : "Comparison";
    j["Section_id"] = section_name(inst.section_id);
    j["Primary_id"] = inst.primary_id;
    if (inst.secondary_id) j["Secondary_id"] = *inst.secondary_id;
    j["Statement"] = inst.statement;
    if (inst.gold) j["Label"] = label_name(*inst.gold);
    if (inst.intervention) {
        j["Base_uuid"] = inst.intervention->base_uuid;
        j["Intervention_kind"] =
            inst.intervention->kind == InterventionKind::Preserving ? "Preserving" : "Altering";
    }
    return j;
}

inline std::vector<Instance> load_instances(const std::filesystem::path& file, Split /*split*/) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(file));
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedFile(file.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw MalformedFile(file.string() + ": root is not an object");
    std::vector<Instance> instances;
    for (auto& [uuid, fields] : doc.items())
        instances.push_back(parse_instance(uuid, fields));
    // deterministic batch order regardless of file-system or object order
    std::sort(instances.begin(), instances.end(),
              [](const Instance& a, const Instance& b) { return a.uuid < b.uuid; });
    for (size_t i = 1; i < instances.size(); ++i)
        if (instances[i].uuid == instances[i - 1].uuid)
            throw MalformedFile("duplicate uuid " + instances[i].uuid);
    // lineage must resolve within the split, to a record without its own lineage
    std::map<std::string, const Instance*> by_uuid;
    for (const auto& inst : instances) by_uuid[inst.uuid] = &inst;
    for (const auto& inst : instances) {
        if (!inst.intervention) continue;
        auto it = by_uuid.find(inst.intervention->base_uuid);
        if (it == by_uuid.end())
            throw DanglingBaseUuid("instance " + inst.uuid + ": Base_uuid " +
                                   inst.intervention->base_uuid + " not in split");
        if (it->second->intervention)
            throw DanglingBaseUuid("instance " + inst.uuid + ": Base_uuid " +
                                   inst.intervention->base_uuid + " is itself intervened");
    }
    return instances;
}

inline std::string serialize_instances(const std::vector<Instance>& instances) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& inst : instances) doc[inst.uuid] = instance_to_json(inst);
    return doc.dump(2);
}

inline Evidence resolve_evidence(const Instance& inst, const TrialMap& trials) {
    auto section_text = [&](const std::string& trial_id) {
        auto it = trials.find(trial_id);
        if (it == trials.end())
            throw DanglingTrialRef("instance " + inst.uuid + ": trial " + trial_id + " not found");
        return join(it->second.sections.at(inst.section_id), "\n");
    };
    Evidence ev;
    ev.rendered = "Primary trial:\n" + section_text(inst.primary_id);
    ev.source_ids.push_back(inst.primary_id);
    if (inst.sample_type == SampleType::Comparison) {
        ev.rendered += "\nSecondary trial:\n" + section_text(*inst.secondary_id);
        ev.source_ids.push_back(*inst.secondary_id);
    }
    return ev;
}

struct SplitStats {
    int total = 0;
    int n_single = 0, n_comparison = 0;
    std::map<SectionId, int> by_section;
    int n_entailment = 0, n_contradiction = 0, n_unlabeled = 0;

    bool operator==(const SplitStats&) const = default;
};

inline SplitStats compute_stats(const std::vector<Instance>& instances) {
    SplitStats s;
    for (SectionId sid : kAllSections) s.by_section[sid] = 0;
    for (const auto& inst : instances) {
        ++s.total;
        (inst.sample_type == SampleType::Single ? s.n_single : s.n_comparison)++;
        s.by_section[inst.section_id]++;
        if (!inst.gold) ++s.n_unlabeled;
        else if (*inst.gold == Label::Entailment) ++s.n_entailment;
        else ++s.n_contradiction;
    }
    return s;
}

// published per-split statistics of the official dataset
inline SplitStats official_stats(Split split) {
    SplitStats s;
    auto fill = [&](int total, int single, int comparison, int interv, int elig, int res,
                    int adverse, int ent, int con) {
        s.total = total;
        s.n_single = single;
        s.n_comparison = comparison;
        s.by_section[SectionId::Intervention] = interv;
        s.by_section[SectionId::Eligibility] = elig;
        s.by_section[SectionId::Results] = res;
        s.by_section[SectionId::AdverseEvents] = adverse;
        s.n_entailment = ent;
        s.n_contradiction = con;
    };
    switch (split) {
        case Split::Train: fill(1700, 1035, 665, 396, 486, 322, 496, 850, 850); break;
        case Split::Dev:   fill(200, 140, 60, 36, 56, 56, 52, 100, 100); break;
        case Split::Test:  fill(5500, 2553, 2947, 1542, 1419, 1235, 1304, 1841, 3659); break;
    }
    return s;
}

struct ValidationReport {
    SplitStats observed;
    std::optional<SplitStats> expected;
    std::vector<std::string> mismatches;

    bool ok() const { return mismatches.empty(); }
};

inline ValidationReport validate_split(const std::vector<Instance>& instances,
                                       std::optional<SplitStats> expected = std::nullopt) {
    ValidationReport rep;
    rep.observed = compute_stats(instances);
    rep.expected = expected;
    if (!expected) return rep;
    auto check = [&](const std::string& what, int got, int want) {
        if (got != want)
            rep.mismatches.push_back(what + ": expected " + std::to_string(want) +
                                     ", got " + std::to_string(got));
    };
    check("total", rep.observed.total, expected->total);
    check("Single", rep.observed.n_single, expected->n_single);
    check("Comparison", rep.observed.n_comparison, expected->n_comparison);
    for (SectionId sid : kAllSections) {
        auto it = expected->by_section.find(sid);
        int want = it == expected->by_section.end() ? 0 : it->second;
        check(section_name(sid), rep.observed.by_section.at(sid), want);
    }
    check("Entailment", rep.observed.n_entailment, expected->n_entailment);
    check("Contradiction", rep.observed.n_contradiction, expected->n_contradiction);
    return rep;
}

} // namespace ctnli
