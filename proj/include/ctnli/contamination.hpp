#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

struct ContaminationCase {
    std::string uuid;
    std::string statement;
    std::string prefix;
    std::string reference_remainder;
    std::optional<std::string> completion;
};

struct ContaminationCaseScore {
    std::string uuid;
    int extractable = 0;     // 0 or 1
    double partial = 0.0;    // in [0, 1]
    std::string error;       // non-empty when the completion request failed
};

struct ContaminationReport {
    double extractable_mean = 0.0;
    double partial_mean = 0.0;
    std::vector<ContaminationCaseScore> per_case;
};

// word-level split: prefix keeps the first ceil(n/2) tokens plus a trailing
// space, remainder gets the rest; both rejoined with single spaces
inline std::pair<std::string, std::string> truncate_half(const std::string& statement) {
    auto tokens = split_ws(statement);
    if (tokens.size() < 2)
        throw TooShort("statement has fewer than 2 tokens: \"" + statement + "\"");
    size_t cut = (tokens.size() + 1) / 2;
    std::vector<std::string> head(tokens.begin(), tokens.begin() + cut);
    std::vector<std::string> tail(tokens.begin() + cut, tokens.end());
    return {join(head, " ") + " ", join(tail, " ")};
}

// 1 iff the normalized completion occurs verbatim inside the normalized remainder
inline int extractable_match(const std::string& completion, const std::string& remainder) {
    std::string c = to_lower(normalize_ws(completion));
    if (c.empty()) return 0;
    std::string r = to_lower(normalize_ws(remainder));
    return r.find(c) != std::string::npos ? 1 : 0;
}

namespace detail {

// A completion token "matches" a reference token when it occurs inside it as a
// contiguous substring.  Cut-off boundary tokens (e.g. "pur" against "purged")
// then still match, which keeps extractable=1 implying partial=1.
inline bool token_matches(const std::string& completion_tok, const std::string& reference_tok) {
    return reference_tok.find(completion_tok) != std::string::npos;
}

inline size_t token_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::vector<size_t>> dp(a.size() + 1, std::vector<size_t>(b.size() + 1, 0));
    for (size_t i = 1; i <= a.size(); ++i)
        for (size_t j = 1; j <= b.size(); ++j)
            dp[i][j] = token_matches(a[i - 1], b[j - 1])
                           ? dp[i - 1][j - 1] + 1
                           : std::max(dp[i - 1][j], dp[i][j - 1]);
    return dp[a.size()][b.size()];
}

} // namespace detail

// fraction of completion tokens matchable in order within the remainder
inline double partial_match(const std::string& completion, const std::string& remainder) {
    auto c = split_ws(to_lower(completion));
    if (c.empty()) return 0.0;
    auto r = split_ws(to_lower(remainder));
    return static_cast<double>(detail::token_lcs(c, r)) / static_cast<double>(c.size());
}

inline ContaminationReport score_cases(const std::vector<ContaminationCase>& cases) {
    ContaminationReport rep;
    double ex_sum = 0.0, pa_sum = 0.0;
    for (const auto& cs : cases) {
        ContaminationCaseScore s;
        s.uuid = cs.uuid;
        if (cs.completion) {
            s.extractable = extractable_match(*cs.completion, cs.reference_remainder);
            s.partial = partial_match(*cs.completion, cs.reference_remainder);
        }
        ex_sum += s.extractable;
        pa_sum += s.partial;
        rep.per_case.push_back(std::move(s));
    }
    if (!rep.per_case.empty()) {
        rep.extractable_mean = ex_sum / rep.per_case.size();
        rep.partial_mean = pa_sum / rep.per_case.size();
    }
    return rep;
}

inline std::string contamination_report_to_jsonl(const ContaminationReport& rep) {
    std::string out;
    for (const auto& s : rep.per_case) {
        nlohmann::json j;
        j["uuid"] = s.uuid;
        j["extractable"] = s.extractable;
        j["partial"] = s.partial;
        if (!s.error.empty()) j["error"] = s.error;
        out += j.dump();
        out += '\n';
    }
    nlohmann::json summary;
    summary["summary"] = {{"extractable_mean", rep.extractable_mean},
                          {"partial_mean", rep.partial_mean},
                          {"cases", rep.per_case.size()}};
    out += summary.dump();
    out += '\n';
    return out;
}

} // namespace ctnli
