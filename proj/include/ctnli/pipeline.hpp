#pragma once

#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnli/corpus.hpp"
#include "ctnli/evaluation.hpp"
#include "ctnli/inference.hpp"
#include "ctnli/prompting.hpp"
#include "ctnli/retrieval.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

inline constexpr const char* kArtifactVersion = "0.1.0";

inline nlohmann::json endpoint_to_json(const EndpointConfig& c) {
    // the key itself is never serialized, only the env var holding it
    nlohmann::json j;
    j["base_url"] = c.base_url;
    j["model_name"] = c.model_name;
    j["api_key_env"] = c.api_key_env;
    j["temperature"] = c.temperature;
    j["top_p"] = c.top_p;
    j["max_new_tokens"] = c.max_new_tokens;
    j["timeout_s"] = c.timeout_s;
    j["max_parallel"] = c.max_parallel;
    j["retry"] = {{"max_attempts", c.retry.max_attempts},
                  {"backoff_base_ms", c.retry.backoff_base_ms},
                  {"jitter_ms", c.retry.jitter_ms}};
    return j;
}

inline EndpointConfig endpoint_from_json(const nlohmann::json& j) {
    EndpointConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model_name = j.value("model_name", c.model_name);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.temperature = j.value("temperature", c.temperature);
    c.top_p = j.value("top_p", c.top_p);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_parallel = j.value("max_parallel", c.max_parallel);
    if (j.contains("retry")) {
        c.retry.max_attempts = j["retry"].value("max_attempts", c.retry.max_attempts);
        c.retry.backoff_base_ms = j["retry"].value("backoff_base_ms", c.retry.backoff_base_ms);
        c.retry.jitter_ms = j["retry"].value("jitter_ms", c.retry.jitter_ms);
    }
    return c;
}

struct RunManifest {
    std::string run_id;
    std::string timestamp;
    std::string endpoint_name;
    EndpointConfig endpoint; // secrets redacted by construction
    PromptSpec spec;
    Bm25Params bm25_params;
    std::uint64_t seed = 0;
    bool same_section_only = false;
    std::map<std::string, std::string> template_hashes;
    std::map<std::string, std::string> corpus_hashes;
    std::string prng = SplitMix64::name();
    std::string artifact_version = kArtifactVersion;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["run_id"] = run_id;
        j["timestamp"] = timestamp;
        j["endpoint_name"] = endpoint_name;
        j["endpoint"] = endpoint_to_json(endpoint);
        j["strategy"] = strategy_name(spec.strategy);
        j["shots"] = spec.shots;
        j["retriever"] = spec.retriever == RetrieverKind::Bm25 ? "bm25" : "random";
        j["bm25_params"] = {{"k1", bm25_params.k1}, {"b", bm25_params.b}};
        j["seed"] = seed;
        j["same_section_only"] = same_section_only;
        j["template_hashes"] = template_hashes;
        j["corpus_hashes"] = corpus_hashes;
        j["prng"] = prng;
        j["artifact_version"] = artifact_version;
        return j;
    }

    static RunManifest from_json(const nlohmann::json& j) {
        RunManifest m;
        m.run_id = j.value("run_id", "");
        m.timestamp = j.value("timestamp", "");
        m.endpoint_name = j.value("endpoint_name", "");
        m.endpoint = endpoint_from_json(j.at("endpoint"));
        m.spec.strategy = parse_strategy(j.at("strategy").get<std::string>());
        m.spec.shots = j.value("shots", 0);
        m.spec.retriever =
            j.value("retriever", "bm25") == "random" ? RetrieverKind::Random : RetrieverKind::Bm25;
        if (j.contains("bm25_params")) {
            m.bm25_params.k1 = j["bm25_params"].value("k1", 1.2);
            m.bm25_params.b = j["bm25_params"].value("b", 0.75);
        }
        m.seed = j.value("seed", std::uint64_t{0});
        m.same_section_only = j.value("same_section_only", false);
        if (j.contains("template_hashes"))
            m.template_hashes = j["template_hashes"].get<std::map<std::string, std::string>>();
        if (j.contains("corpus_hashes"))
            m.corpus_hashes = j["corpus_hashes"].get<std::map<std::string, std::string>>();
        m.prng = j.value("prng", SplitMix64::name());
        m.artifact_version = j.value("artifact_version", kArtifactVersion);
        return m;
    }
};

struct GridCell {
    std::string endpoint_name;
    Strategy strategy = Strategy::ZeroShot;
    int shots = 0;
    RetrieverKind retriever = RetrieverKind::Bm25;

    auto operator<=>(const GridCell&) const = default;
};

struct ExperimentGrid {
    std::vector<GridCell> cells;

    void validate() const {
        auto sorted = cells;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("experiment grid contains duplicate cells");
    }
};

// uuid -> generated explanation, persisted as one JSON object
class ExplanationStore {
public:
    ExplanationStore() = default;

    static ExplanationStore load(const std::filesystem::path& file) {
        ExplanationStore store;
        if (std::filesystem::exists(file)) {
            auto doc = nlohmann::json::parse(read_file(file));
            for (auto& [uuid, text] : doc.items())
                store.entries_[uuid] = text.get<std::string>();
        }
        return store;
    }

    void save(const std::filesystem::path& file) const {
        nlohmann::json doc = nlohmann::json::object();
        for (const auto& [uuid, text] : entries_) doc[uuid] = text;
        write_file(file, doc.dump(2));
    }

    std::optional<std::string> get(const std::string& uuid) const {
        auto it = entries_.find(uuid);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& uuid, std::string text) { entries_[uuid] = std::move(text); }
    size_t size() const { return entries_.size(); }

private:
    std::map<std::string, std::string> entries_;
};

namespace detail {

// stable per-instance seed so retrieval does not depend on batch order
inline std::uint64_t instance_seed(std::uint64_t run_seed, const std::string& uuid) {
    std::string digest = sha256_hex(uuid);
    std::uint64_t h = 0;
    for (int i = 0; i < 16; ++i) {
        char c = digest[i];
        h = (h << 4) | static_cast<std::uint64_t>(c <= '9' ? c - '0' : c - 'a' + 10);
    }
    return run_seed ^ h;
}

} // namespace detail

struct IclPool {
    std::vector<const Instance*> instances; // gold-labelled candidates
    Bm25Index index;                        // over candidate statements

    static IclPool build(const std::vector<Instance>& train, const Bm25Params& params) {
        IclPool pool;
        std::vector<std::pair<std::string, std::string>> docs;
        for (const auto& inst : train) {
            if (!inst.gold) continue;
            pool.instances.push_back(&inst);
            docs.emplace_back(inst.uuid, inst.statement);
        }
        pool.index = Bm25Index::build(docs, params);
        return pool;
    }

    const Instance* find(const std::string& uuid) const {
        for (const auto* inst : instances)
            if (inst->uuid == uuid) return inst;
        return nullptr;
    }
};

// select and materialize ICL examples for one query instance
inline std::vector<IclExample> select_icl_examples(
    const IclPool& pool, const TrialMap& trials, const Instance& query, const PromptSpec& spec,
    std::uint64_t run_seed, const ExplanationStore* explanations, bool same_section_only) {
    std::set<std::string> exclude = {query.uuid};
    if (same_section_only)
        for (const auto* cand : pool.instances)
            if (cand->section_id != query.section_id) exclude.insert(cand->uuid);

    std::vector<RetrievedExample> picked;
    if (spec.retriever == RetrieverKind::Bm25) {
        picked = pool.index.top_k(query.statement, spec.shots, exclude);
    } else {
        picked = random_retrieve(pool.index.doc_ids(), spec.shots,
                                 detail::instance_seed(run_seed, query.uuid), exclude);
    }

    std::vector<IclExample> examples;
    for (const auto& r : picked) {
        const Instance* inst = pool.find(r.uuid);
        if (!inst) throw Error("retrieved uuid not in pool: " + r.uuid);
        IclExample ex;
        ex.evidence = resolve_evidence(*inst, trials);
        ex.statement = inst->statement;
        ex.label = *inst->gold;
        if (spec.uses_cot()) {
            if (!explanations)
                throw ConfigError("icl-cot requires an explanation store");
            auto text = explanations->get(inst->uuid);
            if (!text)
                throw MissingExplanation("no stored explanation for ICL example " + inst->uuid);
            ex.explanation = *text;
        }
        examples.push_back(std::move(ex));
    }
    return examples;
}

inline RenderedPrompt render_for_instance(const Instance& inst, const TrialMap& trials,
                                          const PromptSpec& spec,
                                          const std::vector<IclExample>& examples) {
    Evidence ev = resolve_evidence(inst, trials);
    return spec.uses_cot() ? render_cot(ev, inst.statement, examples)
                           : render_base(ev, inst.statement, examples);
}

struct RunOutput {
    std::vector<GenerationRecord> records;
    std::vector<Prediction> predictions;
};

// retrieve -> render -> infer -> extract, over a whole split
inline RunOutput run_experiment(const std::vector<Instance>& instances, const TrialMap& trials,
                                const std::vector<Instance>& train, const PromptSpec& spec,
                                Backend& backend, const EndpointConfig& endpoint,
                                std::uint64_t seed, const Bm25Params& bm25_params = {},
                                const ExplanationStore* explanations = nullptr,
                                bool same_section_only = false,
                                CheckpointWriter* checkpoint = nullptr, bool fail_fast = false) {
    spec.validate();
    std::optional<IclPool> pool;
    if (spec.uses_icl()) pool.emplace(IclPool::build(train, bm25_params));

    std::vector<BatchItem> items;
    for (const auto& inst : instances) {
        std::vector<IclExample> examples;
        if (spec.uses_icl())
            examples = select_icl_examples(*pool, trials, inst, spec, seed, explanations,
                                           same_section_only);
        items.push_back({inst.uuid, render_for_instance(inst, trials, spec, examples)});
    }

    RunOutput out;
    out.records = batch_complete(backend, endpoint, items, checkpoint, fail_fast);
    for (const auto& rec : out.records) {
        Prediction p;
        p.uuid = rec.uuid;
        p.raw_output = rec.output_text;
        p.extracted = rec.ok() ? extract_label(rec.output_text) : std::nullopt;
        out.predictions.push_back(std::move(p));
    }
    return out;
}

// aligned plain-text row layout mirroring the published results tables
inline std::string format_metric_table(
    const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ostringstream os;
    auto cell = [&](std::optional<double> v) {
        if (!v) return std::string("-");
        std::ostringstream c;
        c << std::fixed << std::setprecision(4) << *v;
        return c.str();
    };
    size_t name_width = 5;
    for (const auto& [name, _] : rows) name_width = std::max(name_width, name.size());
    os << std::left << std::setw(static_cast<int>(name_width + 2)) << "Model" << std::right
       << std::setw(8) << "F1" << std::setw(8) << "Faith." << std::setw(8) << "Con."
       << std::setw(8) << "Avg." << '\n';
    for (const auto& [name, rep] : rows) {
        os << std::left << std::setw(static_cast<int>(name_width + 2)) << name << std::right
           << std::setw(8) << cell(rep.f1) << std::setw(8) << cell(rep.faithfulness)
           << std::setw(8) << cell(rep.consistency) << std::setw(8) << cell(rep.average) << '\n';
    }
    return os.str();
}

// exclusive per-output-directory lock
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
        std::filesystem::create_directories(dir);
        if (std::filesystem::exists(path_))
            throw LockHeld("output directory is locked: " + path_.string());
        write_file(path_, "locked\n");
    }
    ~DirectoryLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

} // namespace ctnli
