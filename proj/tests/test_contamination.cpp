#include <doctest.h>

#include "ctnli/contamination.hpp"

#include "oracles.hpp"
#include "synthetic.hpp"

using namespace ctnli;

TEST_CASE("truncate_half splits on the word boundary with a ceiling prefix") {
    CHECK(truncate_half("a b c d") == std::pair<std::string, std::string>{"a b ", "c d"});
    CHECK(truncate_half("a b c") == std::pair<std::string, std::string>{"a b ", "c"});
    CHECK(truncate_half("alpha beta") == std::pair<std::string, std::string>{"alpha ", "beta"});
    // internal runs of whitespace collapse during the rejoin
    CHECK(truncate_half("  a   b\tc ") == std::pair<std::string, std::string>{"a b ", "c"});
    CHECK_THROWS_AS(truncate_half("single"), TooShort);
    CHECK_THROWS_AS(truncate_half(""), TooShort);
    CHECK_THROWS_AS(truncate_half("   "), TooShort);
}

TEST_CASE("prefix and remainder rejoin to the normalized statement") {
    SplitMix64 rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        auto stmt = synthetic::random_sentence(rng, 2 + rng.next_below(20));
        auto [prefix, remainder] = truncate_half(stmt);
        CHECK(prefix + remainder == normalize_ws(stmt));
        CHECK(prefix.back() == ' ');
        auto head = split_ws(prefix);
        auto tail = split_ws(remainder);
        auto all = split_ws(stmt);
        CHECK(head.size() == (all.size() + 1) / 2);
        CHECK(head.size() + tail.size() == all.size());
        CHECK(head.size() >= tail.size());
        CHECK(head.size() - tail.size() <= 1);
    }
}

TEST_CASE("extractable match is a normalized substring test") {
    CHECK(extractable_match("Following High-dose Chemotherapy With Pur",
                            "Following High-dose Chemotherapy With Purged Autologous Stem Cell "
                            "Products") == 1);
    CHECK(extractable_match("purged autologous", "Following Purged   Autologous Stem") == 1);
    CHECK(extractable_match("was reported as an adverse event in the",
                            "emerged as the most common adverse occurrence in the patient "
                            "groups") == 0);
    CHECK(extractable_match("", "anything") == 0);
    CHECK(extractable_match("   ", "anything") == 0);
    CHECK(extractable_match("abc", "") == 0);
}

TEST_CASE("partial match reproduces the worked examples") {
    // verbatim continuation: every token matches, boundary token by containment
    CHECK(partial_match("Following High-dose Chemotherapy With Pur",
                        "Following High-dose Chemotherapy With Purged Autologous Stem Cell "
                        "Products") == doctest::Approx(1.0));
    // paraphrase: {as, adverse, in, the} survive out of 8 completion tokens
    CHECK(partial_match("was reported as an adverse event in the",
                        "emerged as the most common adverse occurrence in the patient groups") ==
          doctest::Approx(0.5));
    CHECK(partial_match("", "whatever") == 0.0);
    CHECK(partial_match("abc", "") == 0.0);
    CHECK(partial_match("xyz", "completely different words") == 0.0);
}

TEST_CASE("partial match is invariant to case and extra whitespace") {
    std::string c = "Adverse EVENT in";
    std::string r = "the adverse   event in question";
    CHECK(partial_match(c, r) == partial_match(to_lower(c), normalize_ws(r)));
    CHECK(extractable_match("ADVERSE  event", r) == 1);
}

TEST_CASE("an extractable completion always has a perfect partial score") {
    SplitMix64 rng(20240803);
    int extractable_seen = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        auto remainder = synthetic::random_sentence(rng, 1 + rng.next_below(12));
        std::string completion;
        if (rng.next_below(2) == 0) {
            // carve a random substring of the remainder, often mid-token
            size_t lo = rng.next_below(remainder.size());
            size_t len = 1 + rng.next_below(remainder.size() - lo);
            completion = remainder.substr(lo, len);
        } else {
            completion = synthetic::random_sentence(rng, 1 + rng.next_below(6));
        }
        if (split_ws(completion).empty()) continue;
        if (extractable_match(completion, remainder) == 1) {
            ++extractable_seen;
            CHECK(partial_match(completion, remainder) == doctest::Approx(1.0));
        }
    }
    CHECK(extractable_seen > 100); // the property was actually exercised
}

TEST_CASE("partial match agrees with the recursive oracle") {
    SplitMix64 rng(909);
    for (int trial = 0; trial < 300; ++trial) {
        auto c = synthetic::random_sentence(rng, 1 + rng.next_below(8));
        auto r = synthetic::random_sentence(rng, 1 + rng.next_below(10));
        CHECK(partial_match(c, r) == doctest::Approx(oracle::partial_match(c, r)).epsilon(1e-12));
    }
}

TEST_CASE("case scoring aggregates means and zero-fills failures") {
    std::vector<ContaminationCase> cases(3);
    cases[0].uuid = "a";
    cases[0].reference_remainder = "alpha beta gamma";
    cases[0].completion = "alpha beta gamma";
    cases[1].uuid = "b";
    cases[1].reference_remainder = "alpha beta gamma delta";
    cases[1].completion = "alpha zzz";
    cases[2].uuid = "c"; // request failed: no completion
    cases[2].reference_remainder = "whatever";

    auto rep = score_cases(cases);
    REQUIRE(rep.per_case.size() == 3);
    CHECK(rep.per_case[0].extractable == 1);
    CHECK(rep.per_case[0].partial == doctest::Approx(1.0));
    CHECK(rep.per_case[1].extractable == 0);
    CHECK(rep.per_case[1].partial == doctest::Approx(0.5));
    CHECK(rep.per_case[2].extractable == 0);
    CHECK(rep.per_case[2].partial == 0.0);
    CHECK(rep.extractable_mean == doctest::Approx(1.0 / 3.0));
    CHECK(rep.partial_mean == doctest::Approx(1.5 / 3.0));

    SUBCASE("independent recomputation of the means") {
        double ex = 0, pa = 0;
        for (const auto& s : rep.per_case) {
            ex += s.extractable;
            pa += s.partial;
        }
        CHECK(rep.extractable_mean == doctest::Approx(ex / rep.per_case.size()).epsilon(1e-12));
        CHECK(rep.partial_mean == doctest::Approx(pa / rep.per_case.size()).epsilon(1e-12));
    }
    SUBCASE("jsonl report carries one line per case plus a summary") {
        auto text = contamination_report_to_jsonl(rep);
        CHECK(std::count(text.begin(), text.end(), '\n') == 4);
        CHECK(text.find("\"summary\"") != std::string::npos);
    }
    SUBCASE("empty input yields zero means") {
        auto empty = score_cases({});
        CHECK(empty.extractable_mean == 0.0);
        CHECK(empty.partial_mean == 0.0);
    }
}
