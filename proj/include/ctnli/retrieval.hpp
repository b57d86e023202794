#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;

    bool operator==(const Bm25Params&) const = default;
};

struct RetrievedExample {
    std::string uuid;
    double score = 0.0;
    int rank = 0;
};

// lowercase, split on non-alphanumerics, drop empties
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> toks;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            toks.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
}

class Bm25Index {
public:
    struct Posting {
        int doc = 0; // ordinal into doc_ids
        int tf = 0;
    };

    Bm25Index() = default;

    static Bm25Index build(const std::vector<std::pair<std::string, std::string>>& docs,
                           Bm25Params params = {}) {
        Bm25Index index;
        index.params_ = params;
        std::set<std::string> seen;
        for (const auto& [uuid, text] : docs) {
            if (!seen.insert(uuid).second) throw DuplicateDocId("duplicate doc id " + uuid);
            int ordinal = static_cast<int>(index.doc_ids_.size());
            index.doc_ids_.push_back(uuid);
            auto toks = tokenize(text);
            index.doc_len_.push_back(static_cast<int>(toks.size()));
            std::map<std::string, int> tf;
            for (const auto& t : toks) ++tf[t];
            for (const auto& [term, count] : tf)
                index.postings_[term].push_back({ordinal, count});
        }
        long long total = std::accumulate(index.doc_len_.begin(), index.doc_len_.end(), 0LL);
        index.avgdl_ = index.doc_ids_.empty()
                           ? 0.0
                           : static_cast<double>(total) / static_cast<double>(index.doc_ids_.size());
        return index;
    }

    int n_docs() const { return static_cast<int>(doc_ids_.size()); }
    double avgdl() const { return avgdl_; }
    const Bm25Params& params() const { return params_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::vector<int>& doc_len() const { return doc_len_; }

    double score(const std::vector<std::string>& query_tokens, int doc) const {
        if (doc_ids_.empty()) return 0.0;
        double s = 0.0;
        for (const auto& term : query_tokens) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const auto& plist = it->second;
            auto pit = std::lower_bound(plist.begin(), plist.end(), doc,
                                        [](const Posting& p, int d) { return p.doc < d; });
            if (pit == plist.end() || pit->doc != doc) continue;
            double df = static_cast<double>(plist.size());
            double idf = std::log(1.0 + (n_docs() - df + 0.5) / (df + 0.5));
            double tf = static_cast<double>(pit->tf);
            double norm = params_.k1 * (1.0 - params_.b + params_.b * doc_len_[doc] / avgdl_);
            s += idf * tf * (params_.k1 + 1.0) / (tf + norm);
        }
        return s;
    }

    std::vector<RetrievedExample> top_k(const std::string& query, int k,
                                        const std::set<std::string>& exclude = {}) const {
        std::vector<RetrievedExample> scored;
        if (n_docs() == 0) return scored;
        auto query_tokens = tokenize(query);
        for (int doc = 0; doc < n_docs(); ++doc) {
            if (exclude.count(doc_ids_[doc])) continue;
            scored.push_back({doc_ids_[doc], score(query_tokens, doc), 0});
        }
        std::sort(scored.begin(), scored.end(), [](const RetrievedExample& a, const RetrievedExample& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.uuid < b.uuid;
        });
        if (static_cast<int>(scored.size()) > k) scored.resize(k);
        for (size_t i = 0; i < scored.size(); ++i) scored[i].rank = static_cast<int>(i) + 1;
        return scored;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["version"] = 1;
        j["params"] = {{"k1", params_.k1}, {"b", params_.b}};
        j["doc_ids"] = doc_ids_;
        j["doc_len"] = doc_len_;
        j["avgdl"] = avgdl_;
        nlohmann::json posts = nlohmann::json::object();
        for (const auto& [term, plist] : postings_) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& p : plist) arr.push_back({p.doc, p.tf});
            posts[term] = arr;
        }
        j["postings"] = posts;
        return j;
    }

    static Bm25Index from_json(const nlohmann::json& j) {
        if (j.value("version", 0) != 1) throw BadHeader("unsupported index cache version");
        Bm25Index index;
        index.params_.k1 = j["params"]["k1"].get<double>();
        index.params_.b = j["params"]["b"].get<double>();
        index.doc_ids_ = j["doc_ids"].get<std::vector<std::string>>();
        index.doc_len_ = j["doc_len"].get<std::vector<int>>();
        index.avgdl_ = j["avgdl"].get<double>();
        for (auto& [term, arr] : j["postings"].items())
            for (const auto& p : arr)
                index.postings_[term].push_back({p[0].get<int>(), p[1].get<int>()});
        return index;
    }

private:
    Bm25Params params_;
    std::vector<std::string> doc_ids_;
    std::vector<int> doc_len_;
    std::map<std::string, std::vector<Posting>> postings_;
    double avgdl_ = 0.0;
};

// uniform sample of k distinct ids, seeded partial Fisher-Yates
inline std::vector<RetrievedExample> random_retrieve(const std::vector<std::string>& doc_ids,
                                                     int k, std::uint64_t seed,
                                                     const std::set<std::string>& exclude = {}) {
    std::vector<std::string> pool;
    for (const auto& id : doc_ids)
        if (!exclude.count(id)) pool.push_back(id);
    SplitMix64 rng(seed);
    std::vector<RetrievedExample> out;
    int n = static_cast<int>(pool.size());
    int take = std::min(k, n);
    for (int i = 0; i < take; ++i) {
        std::uint64_t j = i + rng.next_below(static_cast<std::uint64_t>(n - i));
        std::swap(pool[i], pool[j]);
        out.push_back({pool[i], 0.0, i + 1});
    }
    return out;
}

} // namespace ctnli
