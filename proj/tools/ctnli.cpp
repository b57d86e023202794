// Command-line front end for the clinical-trial NLI harness.
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctnli/adapters.hpp"
#include "ctnli/contamination.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/evaluation.hpp"
#include "ctnli/http_backend.hpp"
#include "ctnli/pipeline.hpp"
#include "ctnli/toy_lab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ctnli::Split parse_split(const std::string& s) {
    if (s == "train") return ctnli::Split::Train;
    if (s == "dev") return ctnli::Split::Dev;
    if (s == "test") return ctnli::Split::Test;
    throw ctnli::ConfigError("unknown split: " + s);
}

fs::path split_file(const fs::path& data_dir, ctnli::Split split) {
    return data_dir / (ctnli::split_name(split) + ".json");
}

struct EndpointChoice {
    ctnli::EndpointConfig config;
    std::unique_ptr<ctnli::Backend> backend;
};

// "mock" is built in; anything else must appear in the endpoints file
EndpointChoice resolve_endpoint(const std::string& name, const std::string& endpoints_file,
                                const std::string& mock_script, const std::string& mock_default) {
    EndpointChoice choice;
    if (name == "mock") {
        if (!mock_script.empty())
            choice.backend = ctnli::mock_backend_from_file(mock_script);
        else
            choice.backend = std::make_unique<ctnli::MockBackend>(mock_default);
        return choice;
    }
    if (endpoints_file.empty())
        throw ctnli::ConfigError("--endpoints-file required for endpoint \"" + name + "\"");
    auto doc = json::parse(ctnli::read_file(endpoints_file));
    if (!doc.contains(name))
        throw ctnli::ConfigError("endpoint \"" + name + "\" not in " + endpoints_file);
    choice.config = ctnli::endpoint_from_json(doc[name]);
    choice.backend = std::make_unique<ctnli::HttpBackend>();
    return choice;
}

std::map<std::string, ctnli::Label> gold_map(const std::vector<ctnli::Instance>& instances) {
    std::map<std::string, ctnli::Label> golds;
    for (const auto& inst : instances)
        if (inst.gold) golds[inst.uuid] = *inst.gold;
    return golds;
}

std::map<std::string, ctnli::InterventionMeta> lineage_map(
    const std::vector<ctnli::Instance>& instances) {
    std::map<std::string, ctnli::InterventionMeta> lineage;
    for (const auto& inst : instances)
        if (inst.intervention) lineage[inst.uuid] = *inst.intervention;
    return lineage;
}

std::string timestamp_utc() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

int cmd_validate(const std::string& data_dir, const std::string& split_str, bool expect_official) {
    auto split = parse_split(split_str);
    auto instances = ctnli::load_instances(split_file(data_dir, split), split);
    std::optional<ctnli::SplitStats> expected;
    if (expect_official) expected = ctnli::official_stats(split);
    auto rep = ctnli::validate_split(instances, expected);
    const auto& s = rep.observed;
    std::cout << "split " << split_str << ": total " << s.total << " (Single " << s.n_single
              << ", Comparison " << s.n_comparison << ")\n";
    for (ctnli::SectionId sid : ctnli::kAllSections)
        std::cout << "  " << ctnli::section_name(sid) << ": " << s.by_section.at(sid) << '\n';
    std::cout << "  Entailment: " << s.n_entailment << ", Contradiction: " << s.n_contradiction
              << ", unlabeled: " << s.n_unlabeled << '\n';
    for (const auto& m : rep.mismatches) std::cout << "MISMATCH " << m << '\n';
    if (expect_official && !rep.ok()) return 1;
    return 0;
}

int cmd_build_index(const std::string& data_dir, double k1, double b, const std::string& out) {
    auto train = ctnli::load_instances(split_file(data_dir, ctnli::Split::Train),
                                       ctnli::Split::Train);
    std::vector<std::pair<std::string, std::string>> docs;
    std::string corpus_blob;
    for (const auto& inst : train) {
        docs.emplace_back(inst.uuid, inst.statement);
        corpus_blob += inst.uuid + "\x1f" + inst.statement + "\x1e";
    }
    auto index = ctnli::Bm25Index::build(docs, {k1, b});
    json cache = index.to_json();
    cache["corpus_sha256"] = ctnli::sha256_hex(corpus_blob);
    ctnli::write_file(out, cache.dump());
    std::cout << "indexed " << index.n_docs() << " statements -> " << out << '\n';
    return 0;
}

int cmd_gen_explanations(const std::string& data_dir, const EndpointChoice& ep,
                         const std::string& out) {
    auto train = ctnli::load_instances(split_file(data_dir, ctnli::Split::Train),
                                       ctnli::Split::Train);
    auto trials = ctnli::load_trials(fs::path(data_dir) / "trials");
    auto store = ctnli::ExplanationStore::load(out);
    int requested = 0, skipped = 0, failed = 0;
    for (const auto& inst : train) {
        if (!inst.gold) {
            std::cerr << "warning: skipping " << inst.uuid << " (no gold label)\n";
            ++skipped;
            continue;
        }
        if (store.get(inst.uuid)) continue; // resumable
        auto prompt = ctnli::render_explanation_request(
            ctnli::resolve_evidence(inst, trials), inst.statement, *inst.gold);
        ctnli::EndpointConfig cfg = ep.config;
        cfg.max_new_tokens = 256;
        auto rec = ctnli::complete(*ep.backend, cfg, prompt, inst.uuid);
        ++requested;
        if (!rec.ok()) {
            std::cerr << "error: " << inst.uuid << ": " << rec.error << '\n';
            ++failed;
            continue;
        }
        store.put(inst.uuid, rec.output_text);
        store.save(out); // persist as we go so reruns resume
    }
    std::cout << "explanations: " << store.size() << " stored, " << requested << " requested, "
              << skipped << " skipped, " << failed << " failed\n";
    return failed == 0 ? 0 : 1;
}

int cmd_run(const std::string& data_dir, const std::string& split_str,
            const std::string& strategy_str, int shots, const std::string& retriever_str,
            std::uint64_t seed, EndpointChoice& ep, const std::string& endpoint_name,
            const std::string& out_dir, const std::string& explanations_file,
            bool same_section, int max_parallel_override) {
    ctnli::PromptSpec spec;
    spec.strategy = ctnli::parse_strategy(strategy_str);
    spec.shots = shots;
    spec.retriever = retriever_str == "random" ? ctnli::RetrieverKind::Random
                                               : ctnli::RetrieverKind::Bm25;
    spec.validate();

    ctnli::EndpointConfig cfg = ep.config;
    cfg.max_new_tokens = spec.uses_cot() ? ctnli::kMaxNewTokensCot : ctnli::kMaxNewTokensBase;
    if (max_parallel_override > 0) cfg.max_parallel = max_parallel_override;

    std::optional<ctnli::ExplanationStore> store;
    if (spec.strategy == ctnli::Strategy::IclCot) {
        if (explanations_file.empty() || !fs::exists(explanations_file))
            throw ctnli::ConfigError("icl-cot requires --explanations pointing at a store");
        store = ctnli::ExplanationStore::load(explanations_file);
    }

    auto split = parse_split(split_str);
    auto instances = ctnli::load_instances(split_file(data_dir, split), split);
    auto train = ctnli::load_instances(split_file(data_dir, ctnli::Split::Train),
                                       ctnli::Split::Train);
    auto trials = ctnli::load_trials(fs::path(data_dir) / "trials");

    ctnli::DirectoryLock lock(out_dir);
    ctnli::CheckpointWriter checkpoint(fs::path(out_dir) / "checkpoint.jsonl");
    auto output = ctnli::run_experiment(instances, trials, train, spec, *ep.backend, cfg, seed,
                                        {}, store ? &*store : nullptr, same_section, &checkpoint);

    ctnli::write_file(fs::path(out_dir) / "predictions.jsonl",
                      ctnli::predictions_to_jsonl(output.predictions));

    ctnli::RunManifest manifest;
    manifest.run_id = ctnli::sha256_hex(endpoint_name + strategy_str + split_str +
                                        std::to_string(seed)).substr(0, 12);
    manifest.timestamp = timestamp_utc();
    manifest.endpoint_name = endpoint_name;
    manifest.endpoint = cfg;
    manifest.spec = spec;
    manifest.seed = seed;
    manifest.same_section_only = same_section;
    manifest.template_hashes = ctnli::templates::hashes();
    manifest.corpus_hashes["instances"] =
        ctnli::sha256_hex(ctnli::read_file(split_file(data_dir, split)));
    ctnli::write_file(fs::path(out_dir) / "manifest.json", manifest.to_json().dump(2));

    int failures = 0;
    for (const auto& rec : output.records)
        if (!rec.ok()) ++failures;
    std::cout << output.predictions.size() << " predictions (" << failures
              << " failed) -> " << out_dir << '\n';
    return failures == 0 ? 0 : 1;
}

int cmd_score(const std::string& predictions_file, const std::string& gold_file, bool macro,
              const std::string& out) {
    auto predictions =
        ctnli::predictions_from_jsonl(ctnli::read_file(predictions_file));
    auto instances = ctnli::load_instances(gold_file, ctnli::Split::Test);
    auto rep = ctnli::report(predictions, gold_map(instances), lineage_map(instances), macro);
    std::cout << ctnli::format_metric_table({{fs::path(predictions_file).parent_path().filename()
                                                  .string(), rep}});
    if (!out.empty()) ctnli::write_file(out, rep.to_json().dump(2));
    return 0;
}

int cmd_merge_adapters(const std::vector<std::string>& inputs, std::vector<double> coefs,
                       const std::string& out, bool intersect) {
    std::vector<ctnli::AdapterWeights> adapters;
    for (const auto& file : inputs) adapters.push_back(ctnli::read_adapter(file));
    if (coefs.empty()) coefs.assign(adapters.size(), 1.0 / adapters.size());
    auto result = ctnli::merge(adapters, {coefs, intersect});
    ctnli::write_adapter(result.merged, out);
    std::cout << "merged " << adapters.size() << " adapters ("
              << result.merged.tensors.size() << " tensors";
    if (!result.dropped.empty())
        std::cout << ", dropped: " << ctnli::join(result.dropped, ", ");
    std::cout << ") -> " << out << '\n';
    return 0;
}

int cmd_contaminate(const std::string& data_dir, const std::string& split_str, EndpointChoice& ep,
                    const std::string& out_dir) {
    auto split = parse_split(split_str);
    auto instances = ctnli::load_instances(split_file(data_dir, split), split);
    auto trials = ctnli::load_trials(fs::path(data_dir) / "trials");

    ctnli::EndpointConfig cfg = ep.config;
    cfg.max_new_tokens = ctnli::kMaxNewTokensBase;

    std::vector<ctnli::ContaminationCase> cases;
    std::vector<ctnli::BatchItem> items;
    for (const auto& inst : instances) {
        ctnli::ContaminationCase cs;
        cs.uuid = inst.uuid;
        cs.statement = inst.statement;
        try {
            std::tie(cs.prefix, cs.reference_remainder) = ctnli::truncate_half(inst.statement);
        } catch (const ctnli::TooShort&) {
            continue; // single-token statements cannot be probed
        }
        items.push_back({cs.uuid, ctnli::render_contamination(
                                      ctnli::resolve_evidence(inst, trials), cs.prefix)});
        cases.push_back(std::move(cs));
    }
    auto records = ctnli::batch_complete(*ep.backend, cfg, items);
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].ok()) cases[i].completion = records[i].output_text;
    auto rep = ctnli::score_cases(cases);
    for (size_t i = 0; i < records.size(); ++i)
        if (!records[i].ok()) rep.per_case[i].error = records[i].error;
    ctnli::write_file(fs::path(out_dir) / "contamination.jsonl",
                      ctnli::contamination_report_to_jsonl(rep));
    std::cout << "extractable match: " << rep.extractable_mean
              << "\npartial match:     " << rep.partial_mean << '\n';
    return 0;
}

int cmd_triplet_demo(std::uint64_t seed, const std::string& out_dir) {
    auto encoder = ctnli::ToyEncoder::make(8, 32, 4, 8.0, seed);
    auto corpus = ctnli::make_toy_corpus(seed + 1);

    ctnli::TripletConfig tcfg;
    tcfg.learning_rate = 0.5; // toy scale converges fast with plain SGD
    tcfg.grad_accumulation = 8;
    auto triplet = ctnli::train_triplet_adapter(encoder, corpus.triplets, tcfg, seed + 2);

    ctnli::LmConfig lcfg;
    lcfg.learning_rate = 0.5;
    lcfg.grad_accumulation = 8;
    auto lm = ctnli::train_lm_adapter(encoder, corpus.lm_samples, lcfg, seed + 3);

    fs::path dir(out_dir);
    auto w_lm = ctnli::delta_to_weights(encoder, lm.delta);
    auto w_tri = ctnli::delta_to_weights(encoder, triplet.delta);
    ctnli::write_adapter(w_lm, dir / "theta_lm.safetensors");
    ctnli::write_adapter(w_tri, dir / "theta_triplet.safetensors");
    auto merged = ctnli::merge({w_lm, w_tri}, {{0.5, 0.5}, false});
    ctnli::write_adapter(merged.merged, dir / "theta_merged.safetensors");

    json history;
    history["seed"] = seed;
    history["triplet_loss"] = triplet.loss_history;
    history["lm_loss"] = lm.loss_history;
    ctnli::write_file(dir / "loss_history.json", history.dump(2));

    std::cout << "triplet loss: " << triplet.loss_history.front() << " -> "
              << triplet.loss_history.back() << "\nlm loss:      " << lm.loss_history.front()
              << " -> " << lm.loss_history.back() << "\nadapters -> " << out_dir << '\n';
    return 0;
}

int cmd_report(const std::vector<std::string>& metric_files) {
    std::vector<std::pair<std::string, ctnli::MetricReport>> rows;
    for (const auto& file : metric_files) {
        auto j = json::parse(ctnli::read_file(file));
        auto opt = [&](const char* key) -> std::optional<double> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            return j[key].get<double>();
        };
        auto rep = ctnli::MetricReport::from_values(j.value("f1", 0.0), opt("faithfulness"),
                                                    opt("consistency"));
        rows.emplace_back(fs::path(file).stem().string(), rep);
    }
    std::cout << ctnli::format_metric_table(rows);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clinical-trial NLI evaluation harness"};
    app.require_subcommand(1);

    std::string data_dir = "data", split = "dev", out_dir = "runs/out", out_file;
    std::string strategy = "zeroshot", retriever = "bm25";
    std::string endpoint = "mock", endpoints_file, mock_script, mock_default;
    std::string explanations_file, predictions_file, gold_file;
    std::vector<std::string> inputs;
    std::vector<double> coefs;
    std::uint64_t seed = 0;
    int shots = 0, max_parallel = 0;
    bool expect_official = false, macro = false, intersect = false, same_section = false;

    auto add_endpoint_flags = [&](CLI::App* cmd) {
        cmd->add_option("--endpoint", endpoint, "endpoint name, or \"mock\"");
        cmd->add_option("--endpoints-file", endpoints_file, "JSON file of named endpoint configs");
        cmd->add_option("--mock-script", mock_script, "fingerprint->response JSON for mock");
        cmd->add_option("--mock-default", mock_default, "default mock response");
    };

    auto* validate = app.add_subcommand("validate", "check a split against expected statistics");
    validate->add_option("--data-dir", data_dir);
    validate->add_option("--split", split);
    validate->add_flag("--expect-official", expect_official,
                       "fail on mismatch with the published statistics");

    auto* build_index = app.add_subcommand("build-index", "build the BM25 retrieval index");
    double k1 = 1.2, b = 0.75;
    build_index->add_option("--data-dir", data_dir);
    build_index->add_option("--k1", k1);
    build_index->add_option("--b", b);
    build_index->add_option("--out", out_file)->required();

    auto* gen = app.add_subcommand("gen-explanations", "generate CoT explanations for training data");
    gen->add_option("--data-dir", data_dir);
    gen->add_option("--out", out_file)->required();
    add_endpoint_flags(gen);

    auto* run = app.add_subcommand("run", "run one experiment cell over a split");
    run->add_option("--data-dir", data_dir);
    run->add_option("--split", split);
    run->add_option("--strategy", strategy)->check(CLI::IsMember({"zeroshot", "icl", "cot", "icl-cot"}));
    run->add_option("--shots", shots)->check(CLI::Range(0, 2));
    run->add_option("--retriever", retriever)->check(CLI::IsMember({"random", "bm25"}));
    run->add_option("--seed", seed);
    run->add_option("--out", out_dir);
    run->add_option("--explanations", explanations_file);
    run->add_option("--max-parallel", max_parallel);
    run->add_flag("--same-section", same_section, "restrict ICL examples to the query's section");
    add_endpoint_flags(run);

    auto* score = app.add_subcommand("score", "score a predictions file against gold labels");
    score->add_option("predictions", predictions_file)->required();
    score->add_option("gold", gold_file)->required();
    score->add_flag("--macro", macro, "macro-averaged F1 instead of binary");
    score->add_option("--out", out_file);

    auto* merge = app.add_subcommand("merge-adapters", "average adapter tensor files");
    merge->add_option("--in", inputs)->required();
    merge->add_option("--coef", coefs);
    merge->add_option("--out", out_file)->required();
    merge->add_flag("--intersect", intersect, "merge only shared tensor names");

    auto* contaminate = app.add_subcommand("contaminate", "run the completion-based contamination probe");
    contaminate->add_option("--data-dir", data_dir);
    contaminate->add_option("--split", split);
    contaminate->add_option("--out", out_dir);
    add_endpoint_flags(contaminate);

    auto* demo = app.add_subcommand("triplet-demo", "toy train-and-merge demonstration");
    demo->add_option("--seed", seed);
    demo->add_option("--out", out_dir);

    auto* report = app.add_subcommand("report", "print a results table from stored metric files");
    report->add_option("metrics", inputs)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(data_dir, split, expect_official);
        if (build_index->parsed()) return cmd_build_index(data_dir, k1, b, out_file);
        if (gen->parsed()) {
            auto ep = resolve_endpoint(endpoint, endpoints_file, mock_script, mock_default);
            return cmd_gen_explanations(data_dir, ep, out_file);
        }
        if (run->parsed()) {
            auto ep = resolve_endpoint(endpoint, endpoints_file, mock_script, mock_default);
            return cmd_run(data_dir, split, strategy, shots, retriever, seed, ep, endpoint,
                           out_dir, explanations_file, same_section, max_parallel);
        }
        if (score->parsed()) return cmd_score(predictions_file, gold_file, macro, out_file);
        if (merge->parsed()) return cmd_merge_adapters(inputs, coefs, out_file, intersect);
        if (contaminate->parsed()) {
            auto ep = resolve_endpoint(endpoint, endpoints_file, mock_script, mock_default);
            return cmd_contaminate(data_dir, split, ep, out_dir);
        }
        if (demo->parsed()) return cmd_triplet_demo(seed, out_dir);
        if (report->parsed()) return cmd_report(inputs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
