// Acceptance gate: one pass/fail line per criterion, nonzero exit on failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ctnli/adapters.hpp"
#include "ctnli/contamination.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/evaluation.hpp"
#include "ctnli/inference.hpp"
#include "ctnli/pipeline.hpp"
#include "ctnli/prompting.hpp"
#include "ctnli/retrieval.hpp"
#include "ctnli/toy_lab.hpp"

#include "oracles.hpp"
#include "synthetic.hpp"

using namespace ctnli;
namespace fs = std::filesystem;

static const fs::path kMini = fs::path(CTNLI_SOURCE_DIR) / "tests" / "data" / "mini";

namespace {

int g_failures = 0;

void verdict(const std::string& name, bool ok, const std::string& note = "") {
    std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
                note.empty() ? "" : " -- ", note.c_str());
    if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---- 1: lineage metrics vs pairwise oracle ----

void criterion_lineage_metrics() {
    auto start = std::chrono::steady_clock::now();
    SplitMix64 rng(1001);
    bool ok = true;
    std::string note;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        auto split = synthetic::make_lineage_split(rng, 6 + rng.next_below(495));
        auto extracted = synthetic::extraction_map(split);
        auto want_f = oracle::faithfulness(split.pairs, extracted, split.golds);
        auto want_c = oracle::consistency(split.pairs, extracted);
        std::optional<double> got_f, got_c;
        try {
            got_f = faithfulness(split.predictions, split.golds, split.lineage);
        } catch (const MissingLineage&) {
        } catch (const EmptyContrastSet&) {
        }
        try {
            got_c = consistency(split.predictions, split.lineage);
        } catch (const EmptyPreservingSet&) {
        }
        if (got_f != want_f || got_c != want_c) {
            ok = false;
            note = "mismatch on trial " + std::to_string(trial);
        }
    }
    double elapsed = seconds_since(start);
    if (ok && elapsed >= 10.0) {
        ok = false;
        note = "too slow: " + std::to_string(elapsed) + "s";
    }
    verdict("lineage metrics match the pairwise oracle on 100 random splits", ok, note);
}

// ---- 2: published table averages ----

void criterion_published_averages() {
    struct Row {
        const char* name;
        double f1, faith, con, avg;
    };
    const Row rows[] = {
        {"prompted best", 0.7751, 0.9479, 0.7754, 0.8328},
        {"ft row 1", 0.7689, 0.7662, 0.7140, 0.7497},
        {"ft row 2", 0.7478, 0.8727, 0.7220, 0.7808},
        {"ft row 3", 0.6073, 0.7176, 0.6146, 0.6465},
        {"ft row 4", 0.6766, 0.7731, 0.6610, 0.7036},
        {"ft row 5", 0.1980, 0.9560, 0.6165, 0.5902},
        {"merged adapters", 0.7824, 0.8391, 0.7372, 0.7862},
    };
    bool ok = true;
    std::string note;
    for (const auto& row : rows) {
        auto rep = MetricReport::from_values(row.f1, row.faith, row.con);
        if (!rep.average || std::abs(*rep.average - row.avg) > 5e-5) {
            ok = false;
            note = std::string("row '") + row.name + "' off by " +
                   std::to_string(rep.average ? std::abs(*rep.average - row.avg) : -1.0);
            break;
        }
    }
    verdict("averaged scores reproduce all published table rows within 5e-5", ok, note);
}

// ---- 3: BM25 vs brute force ----

void criterion_bm25() {
    bool ok = true;
    std::string note;

    auto index = Bm25Index::build({{"d0", "cancer trial"}});
    double closed = std::log(4.0 / 3.0);
    if (std::abs(index.score(tokenize("cancer"), 0) - closed) > 1e-9) {
        ok = false;
        note = "closed-form single-document score drifted";
    }

    SplitMix64 rng(3003);
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        auto docs = synthetic::random_corpus(rng, 40);
        auto query = synthetic::random_sentence(rng, 1 + rng.next_below(6));
        int k = 1 + static_cast<int>(rng.next_below(5));
        auto got = Bm25Index::build(docs).top_k(query, k);
        auto want = oracle::bm25_top_k(docs, query, k, 1.2, 0.75);
        if (got.size() != want.size()) {
            ok = false;
        } else {
            for (size_t i = 0; i < got.size(); ++i)
                if (got[i].uuid != want[i]) ok = false;
        }
        if (!ok) note = "ranking mismatch on trial " + std::to_string(trial);
    }
    verdict("BM25 rankings equal brute force on 1000 random corpora", ok, note);
}

// ---- 4: gradient checks ----

void criterion_grad_checks() {
    auto start = std::chrono::steady_clock::now();
    bool ok = true;
    std::string note;
    SplitMix64 rng(4004);
    TripletConfig cfg;

    int done = 0;
    while (done < 100 && ok) {
        std::vector<double> a(5), p(5), n(5);
        for (auto* v : {&a, &p, &n})
            for (auto& x : *v) x = 2.0 * rng.next_double() - 1.0;
        double hinge = pair_distance(a, p, cfg.p, cfg.epsilon) -
                       pair_distance(a, n, cfg.p, cfg.epsilon) + cfg.margin;
        if (hinge <= 1e-3) continue; // need an active, well-separated probe
        auto rep = grad_check_triplet(a, p, n, cfg);
        if (rep.max_rel_error > 1e-4) {
            ok = false;
            note = "triplet probe rel error " + std::to_string(rep.max_rel_error);
        }
        ++done;
    }

    auto enc = ToyEncoder::make(5, 12, 2, 4.0, 11);
    for (int t = 0; t < 100 && ok; ++t) {
        auto delta = detail::init_delta(enc, 9000 + t);
        for (double& x : delta.b.data) x = 0.2 * (rng.next_double() - 0.5);
        std::vector<int> tokens = {static_cast<int>(rng.next_below(12)),
                                   static_cast<int>(rng.next_below(12)),
                                   static_cast<int>(rng.next_below(12))};
        Label y = t % 2 ? Label::Entailment : Label::Contradiction;
        auto g = lm_grad(enc, delta, tokens, y);
        std::vector<double> analytic = g.a.data;
        analytic.insert(analytic.end(), g.b.data.begin(), g.b.data.end());
        std::vector<double> flat = delta.a.data;
        flat.insert(flat.end(), delta.b.data.begin(), delta.b.data.end());
        auto loss = [&](const std::vector<double>& x) {
            LoraDelta d;
            d.a = Matrix(enc.rank, enc.vocab());
            d.b = Matrix(enc.dim(), enc.rank);
            std::copy(x.begin(), x.begin() + d.a.data.size(), d.a.data.begin());
            std::copy(x.begin() + d.a.data.size(), x.end(), d.b.data.begin());
            return lm_loss(enc, d, tokens, y);
        };
        auto rep = grad_check(loss, flat, analytic);
        if (rep.max_rel_error > 1e-4) {
            ok = false;
            note = "classifier probe rel error " + std::to_string(rep.max_rel_error);
        }
    }

    double elapsed = seconds_since(start);
    if (ok && elapsed >= 5.0) {
        ok = false;
        note = "too slow: " + std::to_string(elapsed) + "s";
    }
    verdict("100 finite-difference probes per objective stay within 1e-4", ok, note);
}

// ---- 5: merge identities with an independent file parse ----

// raw re-parse of a serialized adapter: header length, JSON, memcpy doubles
std::map<std::string, std::vector<double>> raw_parse_f64(const std::string& bytes) {
    std::uint64_t n = 0;
    for (int i = 0; i < 8; ++i)
        n |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    auto header = nlohmann::json::parse(bytes.substr(8, n));
    const char* data = bytes.data() + 8 + n;
    std::map<std::string, std::vector<double>> out;
    for (auto& [name, entry] : header.items()) {
        if (name == "__metadata__") continue;
        auto offs = entry["data_offsets"].get<std::vector<std::uint64_t>>();
        size_t count = (offs[1] - offs[0]) / 8;
        std::vector<double> vals(count);
        std::memcpy(vals.data(), data + offs[0], count * 8);
        out[name] = vals;
    }
    return out;
}

void criterion_merge() {
    bool ok = true;
    std::string note;

    AdapterWeights a, b;
    SplitMix64 rng(5005);
    auto random_tensor = [&](std::vector<std::int64_t> shape) {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> vals(static_cast<size_t>(n));
        for (auto& v : vals) v = 2.0 * rng.next_double() - 1.0;
        return Tensor::from_f64(Dtype::F64, std::move(shape), vals);
    };
    a.tensors["embed.lora_A.weight"] = random_tensor({4, 16});
    a.tensors["embed.lora_B.weight"] = random_tensor({8, 4});
    a.meta.entries = {{"r", "4"}};
    b = a;
    b.tensors["embed.lora_A.weight"] = random_tensor({4, 16});
    b.tensors["embed.lora_B.weight"] = random_tensor({8, 4});

    // identity: avg(theta, theta) == theta bitwise
    auto self = merge({a, a}, {});
    if (!(self.merged == a)) {
        ok = false;
        note = "self-average is not the identity";
    }

    // round trip is byte-identical
    auto bytes = serialize_adapter(a);
    if (ok && serialize_adapter(deserialize_adapter(bytes)) != bytes) {
        ok = false;
        note = "serialization round trip changed bytes";
    }

    // merged file re-parsed independently equals the f64 elementwise mean, 0 ulp
    if (ok) {
        auto merged = merge({a, b}, {}).merged;
        auto parsed = raw_parse_f64(serialize_adapter(merged));
        for (const auto& [name, tensor] : a.tensors) {
            auto va = tensor.to_f64();
            auto vb = b.tensors.at(name).to_f64();
            const auto& got = parsed.at(name);
            for (size_t i = 0; i < va.size() && ok; ++i) {
                double want = 0.5 * va[i] + 0.5 * vb[i];
                if (std::memcmp(&want, &got[i], 8) != 0) {
                    ok = false;
                    note = "merged " + name + " deviates from the f64 mean";
                }
            }
        }
    }
    verdict("adapter merge identities hold and files re-parse to the exact f64 mean", ok, note);
}

// ---- 6: end-to-end toy training, merging, re-attachment ----

void criterion_toy_end_to_end() {
    bool ok = true;
    std::string note;
    auto dir = fs::temp_directory_path() / "ctnli_acceptance_toy";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto enc = ToyEncoder::make(8, 32, 4, 8.0, 60);
    auto corpus = make_toy_corpus(61);

    TripletConfig tcfg;
    tcfg.learning_rate = 0.5;
    tcfg.grad_accumulation = 8; // more updates per epoch on the tiny corpus
    auto triplet = train_triplet_adapter(enc, corpus.triplets, tcfg, 62);
    LmConfig lcfg;
    lcfg.learning_rate = 0.5;
    lcfg.grad_accumulation = 8;
    auto lm = train_lm_adapter(enc, corpus.lm_samples, lcfg, 63);

    // the triplet objective collapses well below a tenth of the margin
    double final_loss = triplet.loss_history.back();
    if (final_loss >= tcfg.margin / 10.0) {
        ok = false;
        note = "final triplet loss " + std::to_string(final_loss);
    }

    if (ok) {
        auto w_lm = delta_to_weights(enc, lm.delta);
        auto w_tr = delta_to_weights(enc, triplet.delta);
        write_adapter(w_lm, dir / "theta_lm.safetensors");
        write_adapter(w_tr, dir / "theta_triplet.safetensors");
        auto merged = merge({read_adapter(dir / "theta_lm.safetensors"),
                             read_adapter(dir / "theta_triplet.safetensors")},
                            {}).merged;
        write_adapter(merged, dir / "theta_merged.safetensors");
        auto attached = attach_delta(enc, read_adapter(dir / "theta_merged.safetensors"));

        // every factor element is bitwise the f64 mean of its parents
        auto check_factor = [&](const std::vector<double>& got, const std::vector<double>& pa,
                                const std::vector<double>& pb) {
            for (size_t i = 0; i < got.size(); ++i) {
                double want = 0.5 * pa[i] + 0.5 * pb[i];
                if (std::memcmp(&want, &got[i], 8) != 0) return false;
            }
            return true;
        };
        if (!check_factor(attached.a.data, lm.delta.a.data, triplet.delta.a.data) ||
            !check_factor(attached.b.data, lm.delta.b.data, triplet.delta.b.data)) {
            ok = false;
            note = "re-attached merged delta is not the bitwise f64 mean";
        }
    }

    // pinned regression value: the seeded run is fully deterministic
    if (ok && std::abs(final_loss - 0.000163029141) > 1e-12) {
        ok = false;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.12f", final_loss);
        note = std::string("final triplet loss drifted to ") + buf;
    }
    if (ok) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.12f", final_loss);
        note = std::string("final triplet loss ") + buf;
    }
    fs::remove_all(dir);
    verdict("toy pipeline trains, merges, and re-attaches the exact mean adapter", ok, note);
}

// ---- 7: extraction goldens ----

void criterion_extraction() {
    bool ok = true;
    std::string note;
    auto verdict_of = extract_label(
        " Great, let's analyze the statement and the evidence provided to determine if it's ... "
        "because the evidence shows that there are no adverse events recorded for the "
        "participants in either trial.\nTherefore, the answer is Entailment.\"");
    if (verdict_of != Label::Entailment) {
        ok = false;
        note = "reasoning transcript did not extract to its final verdict";
    }
    if (ok && extract_label("").has_value()) {
        ok = false;
        note = "empty output extracted a label";
    }
    if (ok) {
        // an unparseable output scores as incorrect for a positive gold
        Prediction p;
        p.uuid = "u";
        auto r = f1_score({p}, {{"u", Label::Entailment}});
        if (r.counts.fn != 1 || r.counts.unparsed != 1 || r.f1 != 0.0) {
            ok = false;
            note = "unparseable output not scored as an incorrect positive";
        }
    }
    verdict("label extraction goldens hold and unparseable outputs score incorrect", ok, note);
}

// ---- 8: contamination scoring ----

void criterion_contamination() {
    bool ok = true;
    std::string note;

    std::string ref =
        "Following High-dose Chemotherapy With Purged Autologous Stem Cell Products";
    if (extractable_match("Following High-dose Chemotherapy With Pur", ref) != 1 ||
        partial_match("Following High-dose Chemotherapy With Pur", ref) != 1.0) {
        ok = false;
        note = "verbatim continuation example did not score (1, 1)";
    }
    double para = partial_match("was reported as an adverse event in the",
                                "emerged as the most common adverse occurrence in the patient "
                                "groups");
    if (ok && std::abs(para - 0.5) > 1e-12) {
        ok = false;
        note = "paraphrase example scored " + std::to_string(para);
    }
    if (ok && std::abs(para - oracle::partial_match(
                                  "was reported as an adverse event in the",
                                  "emerged as the most common adverse occurrence in the "
                                  "patient groups")) > 1e-12) {
        ok = false;
        note = "paraphrase example disagrees with the recursive oracle";
    }

    SplitMix64 rng(8008);
    int seen = 0;
    for (int trial = 0; trial < 10000 && ok; ++trial) {
        auto remainder = synthetic::random_sentence(rng, 1 + rng.next_below(12));
        std::string completion;
        if (rng.next_below(2) == 0) {
            size_t lo = rng.next_below(remainder.size());
            completion = remainder.substr(lo, 1 + rng.next_below(remainder.size() - lo));
        } else {
            completion = synthetic::random_sentence(rng, 1 + rng.next_below(6));
        }
        if (split_ws(completion).empty()) continue;
        if (extractable_match(completion, remainder) == 1) {
            ++seen;
            if (partial_match(completion, remainder) != 1.0) {
                ok = false;
                note = "extractable completion scored partial < 1: \"" + completion + "\"";
            }
        }
    }
    if (ok && seen < 1000) {
        ok = false;
        note = "property under-exercised: " + std::to_string(seen);
    }
    verdict("extractable completions always score a perfect partial match", ok, note);
}

// ---- 9: determinism and resume over the bundled fixture ----

struct MiniRun {
    TrialMap trials = load_trials(kMini / "trials");
    std::vector<Instance> train = load_instances(kMini / "train.json", Split::Train);
    std::vector<Instance> dev = load_instances(kMini / "dev.json", Split::Dev);
};

void criterion_determinism_and_resume() {
    bool ok = true;
    std::string note;
    MiniRun fx;
    PromptSpec spec;
    spec.strategy = Strategy::Icl;
    spec.shots = 1;
    EndpointConfig cfg;
    cfg.retry.backoff_base_ms = 0.0;
    cfg.retry.jitter_ms = 0.0;

    // scripted answers: a mix of labels, keyed by the actual dev fingerprints
    auto script_all = [&](MockBackend& backend, int fail_first_for_odd) {
        IclPool pool = IclPool::build(fx.train, {});
        for (size_t i = 0; i < fx.dev.size(); ++i) {
            auto examples =
                select_icl_examples(pool, fx.trials, fx.dev[i], spec, 9, nullptr, false);
            auto prompt = render_for_instance(fx.dev[i], fx.trials, spec, examples);
            MockBackend::Entry entry;
            entry.response = i % 2 ? "Entailment" : "I lean towards Contradiction";
            if (i % 2 == 1 && fail_first_for_odd > 0) entry.fail_first = fail_first_for_odd;
            backend.script(prompt.fingerprint, entry);
        }
    };

    MockBackend b1, b2;
    script_all(b1, 0);
    script_all(b2, 0);
    auto run1 = run_experiment(fx.dev, fx.trials, fx.train, spec, b1, cfg, 9);
    auto run2 = run_experiment(fx.dev, fx.trials, fx.train, spec, b2, cfg, 9);
    auto clean = predictions_to_jsonl(run1.predictions);
    if (clean != predictions_to_jsonl(run2.predictions)) {
        ok = false;
        note = "repeated runs differ";
    }

    if (ok) {
        auto dir = fs::temp_directory_path() / "ctnli_acceptance_resume";
        fs::remove_all(dir);
        auto ckpt_path = dir / "checkpoint.jsonl";

        // interrupted run: odd items exhaust their retries and land as failures
        {
            MockBackend flaky;
            script_all(flaky, 1000);
            CheckpointWriter ckpt(ckpt_path);
            run_experiment(fx.dev, fx.trials, fx.train, spec, flaky, cfg, 9, {}, nullptr, false,
                           &ckpt);
        }
        // resumed run against a healthy backend completes only the gaps
        MockBackend healthy;
        script_all(healthy, 0);
        CheckpointWriter ckpt(ckpt_path);
        auto resumed = run_experiment(fx.dev, fx.trials, fx.train, spec, healthy, cfg, 9, {},
                                      nullptr, false, &ckpt);
        if (predictions_to_jsonl(resumed.predictions) != clean) {
            ok = false;
            note = "resumed run differs from the uninterrupted run";
        } else if (healthy.request_log().size() >= fx.dev.size()) {
            ok = false;
            note = "resume re-issued completed requests";
        }
        fs::remove_all(dir);
    }
    verdict("mock runs are byte-identical and resume equals an uninterrupted run", ok, note);
}

// ---- 10: persisted artifacts feed the scorer unchanged ----

void criterion_artifact_round_trip() {
    bool ok = true;
    std::string note;
    MiniRun fx;
    auto dir = fs::temp_directory_path() / "ctnli_acceptance_score";
    fs::remove_all(dir);
    fs::create_directories(dir);

    MockBackend backend;
    PromptSpec spec; // zero-shot
    EndpointConfig cfg;
    cfg.retry.backoff_base_ms = 0.0;
    for (size_t i = 0; i < fx.dev.size(); ++i) {
        auto prompt = render_for_instance(fx.dev[i], fx.trials, spec, {});
        backend.script_response(prompt.fingerprint,
                                i % 3 == 0 ? "Contradiction" : "Entailment");
    }
    auto out = run_experiment(fx.dev, fx.trials, fx.train, spec, backend, cfg, 1);

    std::map<std::string, Label> golds;
    std::map<std::string, InterventionMeta> lineage;
    for (const auto& inst : fx.dev) {
        if (inst.gold) golds[inst.uuid] = *inst.gold;
        if (inst.intervention) lineage[inst.uuid] = *inst.intervention;
    }
    auto direct = report(out.predictions, golds, lineage);

    // persist predictions and gold instances, then score from the files alone
    write_file(dir / "predictions.jsonl", predictions_to_jsonl(out.predictions));
    write_file(dir / "gold.json", serialize_instances(fx.dev));

    auto loaded_preds = predictions_from_jsonl(read_file(dir / "predictions.jsonl"));
    auto loaded_gold = load_instances(dir / "gold.json", Split::Dev);
    std::map<std::string, Label> golds2;
    std::map<std::string, InterventionMeta> lineage2;
    for (const auto& inst : loaded_gold) {
        if (inst.gold) golds2[inst.uuid] = *inst.gold;
        if (inst.intervention) lineage2[inst.uuid] = *inst.intervention;
    }
    auto from_files = report(loaded_preds, golds2, lineage2);
    if (from_files.to_json() != direct.to_json()) {
        ok = false;
        note = "file-based scoring diverged from in-memory scoring";
    }
    fs::remove_all(dir);
    verdict("persisted predictions and gold files reproduce the in-memory metrics", ok, note);
}

} // namespace

int main() {
    criterion_lineage_metrics();
    criterion_published_averages();
    criterion_bm25();
    criterion_grad_checks();
    criterion_merge();
    criterion_toy_end_to_end();
    criterion_extraction();
    criterion_contamination();
    criterion_determinism_and_resume();
    criterion_artifact_round_trip();
    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
