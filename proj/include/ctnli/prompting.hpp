#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctnli/corpus.hpp"
#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

enum class Strategy { ZeroShot, Icl, Cot, IclCot };

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::ZeroShot: return "zeroshot";
        case Strategy::Icl:      return "icl";
        case Strategy::Cot:      return "cot";
        case Strategy::IclCot:   return "icl-cot";
    }
    throw Error("unreachable strategy");
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "zeroshot") return Strategy::ZeroShot;
    if (s == "icl") return Strategy::Icl;
    if (s == "cot") return Strategy::Cot;
    if (s == "icl-cot") return Strategy::IclCot;
    throw ConfigError("unknown strategy: " + s);
}

enum class RetrieverKind { Random, Bm25 };

struct PromptSpec {
    Strategy strategy = Strategy::ZeroShot;
    int shots = 0;
    RetrieverKind retriever = RetrieverKind::Bm25;

    void validate() const {
        bool icl = strategy == Strategy::Icl || strategy == Strategy::IclCot;
        if (!icl && shots != 0)
            throw ConfigError("shots must be 0 for " + strategy_name(strategy));
        if (icl && (shots < 1 || shots > 2))
            throw ConfigError("shots must be 1 or 2 for " + strategy_name(strategy));
    }

    bool uses_cot() const { return strategy == Strategy::Cot || strategy == Strategy::IclCot; }
    bool uses_icl() const { return strategy == Strategy::Icl || strategy == Strategy::IclCot; }
};

struct IclExample {
    Evidence evidence;
    std::string statement;
    Label label = Label::Entailment;
    std::optional<std::string> explanation;
};

struct RenderedPrompt {
    std::string system;
    std::string user;
    std::string fingerprint;

    // one string for raw-completion endpoints
    std::string flattened() const { return system + "\n\n" + user; }
};

// The template texts.  These are whitespace contracts; identical copies ship
// under templates/ and a test holds the two in sync.
namespace templates {

inline constexpr const char* kSystemBase = "You are a helpful assistant.";

inline constexpr const char* kQueryBase =
    "Evidence: \n{evidence_block}Statement: {statement}\n"
    "Question: Answer in 1 word. Is the statement a contradiction or an entailment?\n"
    "Answer: ";

inline constexpr const char* kQueryCot =
    "Evidence: \n{evidence_block}Statement: {statement}\n"
    "Question: Is the statement a contradiction or an entailment?\n"
    "Let's think step by step\n"
    "Answer: ";

inline constexpr const char* kSystemExplanation =
    "You are a helpful clinician's assistant designed to identify if a clinical statement "
    "is a contradiction or an entailment to the presented evidence.";

inline constexpr const char* kUserExplanation =
    "Evidence: {evidence}\nStatement: {statement}\n"
    "Question: Answer in 1 word. Is the statement a contradiction or an entailment?\n"
    "Answer: {label}\n"
    "Reason the answer step by step";

inline constexpr const char* kSystemContamination =
    "You are a helpful assistant on the semeval task. Complete the given statement.";

inline constexpr const char* kUserContamination =
    "Evidence: \n{evidence_block}Statement: {prefix}";

inline const std::map<std::string, std::string>& all() {
    static const std::map<std::string, std::string> m = {
        {"system_base.txt", kSystemBase},
        {"query_base.txt", kQueryBase},
        {"query_cot.txt", kQueryCot},
        {"system_explanation.txt", kSystemExplanation},
        {"user_explanation.txt", kUserExplanation},
        {"system_contamination.txt", kSystemContamination},
        {"user_contamination.txt", kUserContamination},
    };
    return m;
}

// SHA-256 per template, recorded in run manifests
inline std::map<std::string, std::string> hashes() {
    std::map<std::string, std::string> out;
    for (const auto& [name, text] : all()) out[name] = sha256_hex(text);
    return out;
}

} // namespace templates

namespace detail {

inline std::string replace_all(std::string text, std::string_view needle, std::string_view value) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), value);
        pos += value.size();
    }
    return text;
}

// empty evidence collapses to "Evidence: \nStatement:" with no blank line
inline std::string evidence_block(const std::string& rendered) {
    return rendered.empty() ? std::string() : rendered + "\n";
}

inline std::string fill_query(const char* tmpl, const Evidence& evidence,
                              const std::string& statement) {
    std::string out = replace_all(tmpl, "{evidence_block}", evidence_block(evidence.rendered));
    return replace_all(std::move(out), "{statement}", statement);
}

inline RenderedPrompt finish(std::string system, std::string user) {
    RenderedPrompt p;
    p.fingerprint = sha256_hex(system + '\x1e' + user);
    p.system = std::move(system);
    p.user = std::move(user);
    return p;
}

} // namespace detail

// zero-shot / plain ICL prompt; examples carry no explanations
inline RenderedPrompt render_base(const Evidence& evidence, const std::string& statement,
                                  const std::vector<IclExample>& examples = {}) {
    std::string user;
    for (const auto& ex : examples) {
        if (ex.explanation)
            throw ExplanationNotAllowed("ICL example carries an explanation in a non-CoT prompt");
        user += detail::fill_query(templates::kQueryBase, ex.evidence, ex.statement);
        user += label_name(ex.label);
        user += "\n\n";
    }
    user += detail::fill_query(templates::kQueryBase, evidence, statement);
    return detail::finish(templates::kSystemBase, std::move(user));
}

// CoT prompt; any ICL examples must carry their explanation
inline RenderedPrompt render_cot(const Evidence& evidence, const std::string& statement,
                                 const std::vector<IclExample>& examples = {}) {
    std::string user;
    for (const auto& ex : examples) {
        if (!ex.explanation)
            throw MissingExplanation("CoT ICL example lacks an explanation");
        user += detail::fill_query(templates::kQueryCot, ex.evidence, ex.statement);
        user += label_name(ex.label);
        user += "\n";
        user += *ex.explanation;
        user += "\n\n";
    }
    user += detail::fill_query(templates::kQueryCot, evidence, statement);
    return detail::finish(templates::kSystemBase, std::move(user));
}

// request asking the endpoint to explain a gold-labelled training instance
inline RenderedPrompt render_explanation_request(const Evidence& evidence,
                                                 const std::string& statement, Label gold) {
    std::string user = detail::replace_all(templates::kUserExplanation, "{evidence}",
                                           evidence.rendered);
    user = detail::replace_all(std::move(user), "{statement}", statement);
    user = detail::replace_all(std::move(user), "{label}", label_name(gold));
    return detail::finish(templates::kSystemExplanation, std::move(user));
}

// completion probe: no Question/Answer scaffold, prefix verbatim
inline RenderedPrompt render_contamination(const Evidence& evidence,
                                           const std::string& statement_prefix) {
    std::string user = detail::replace_all(templates::kUserContamination, "{evidence_block}",
                                           detail::evidence_block(evidence.rendered));
    user = detail::replace_all(std::move(user), "{prefix}", statement_prefix);
    return detail::finish(templates::kSystemContamination, std::move(user));
}

} // namespace ctnli
