#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "finrank/error.hpp"
#include "finrank/evaluation.hpp"
#include "finrank/rng.hpp"
#include "support.hpp"

using namespace finrank;

namespace {

using Ids = std::vector<std::string>;

RankedList ranked(const Ids& ids) {
    RankedList out;
    double score = static_cast<double>(ids.size());
    for (const auto& id : ids) {
        out.push_back({id, score});
        score -= 1.0;
    }
    return out;
}

} // namespace

TEST_CASE("NDCG hand values") {
    const Ids r{"a", "b", "c", "d"};
    CHECK(eval::ndcg(r, {"a"}, 10) == 1.0);
    CHECK(eval::ndcg(r, {"b"}, 10) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
    CHECK(eval::ndcg(r, {"b"}, 10) == doctest::Approx(0.6309).epsilon(1e-4));
    const double expected = (1.0 + 0.5) / (1.0 + 1.0 / std::log2(3.0));
    CHECK(eval::ndcg(r, {"a", "c"}, 10) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(eval::ndcg(r, {"a", "c"}, 10) == doctest::Approx(0.9197).epsilon(1e-4));
    CHECK(eval::ndcg(r, {}, 10) == 0.0);
    CHECK(eval::ndcg(r, {"d"}, 3) == 0.0);
}

TEST_CASE("reciprocal rank and precision") {
    const Ids r{"a", "b", "c", "d"};
    CHECK(eval::reciprocal_rank(r, {"c"}, 10) == doctest::Approx(1.0 / 3.0));
    CHECK(eval::reciprocal_rank(r, {"d"}, 3) == 0.0);
    CHECK(eval::precision_at_k(r, {"a"}, 1) == 1.0);
    CHECK(eval::precision_at_k(r, {"a", "b"}, 4) == 0.5);
    // short lists are still divided by k
    CHECK(eval::precision_at_k(Ids{"a"}, {"a"}, 5) == 0.2);
    CHECK_THROWS_AS(eval::precision_at_k(r, {"a"}, 0), InvalidArgument);
}

TEST_CASE("MRR over two questions") {
    const std::vector<corpus::Question> qs{{"q1", "", {"a1"}}, {"q2", "", {"b4"}}};
    eval::Run run{{"q1", ranked({"a1", "a2"})}, {"q2", ranked({"b1", "b2", "b3", "b4"})}};
    const auto report = eval::evaluate(run, qs);
    CHECK(report.mrr == doctest::Approx(0.625).epsilon(1e-15));
    CHECK(report.question_count == 2);
}

TEST_CASE("perfect and empty runs") {
    const std::vector<corpus::Question> qs{{"q1", "", {"a1"}}, {"q2", "", {"b1", "b2"}}};
    eval::Run perfect{{"q1", ranked({"a1", "x"})}, {"q2", ranked({"b1", "b2", "x"})}};
    const auto p = eval::evaluate(perfect, qs);
    CHECK(p.mrr == 1.0);
    CHECK(p.ndcg == 1.0);
    CHECK(p.precision == 1.0);

    const auto e = eval::evaluate({}, qs);
    CHECK(e.mrr == 0.0);
    CHECK(e.ndcg == 0.0);
    CHECK(e.precision == 0.0);
    CHECK(e.question_count == 2);
    CHECK_FALSE(e.per_question[0].in_run);
}

TEST_CASE("run questions without judgments are rejected") {
    eval::Run run{{"q9", ranked({"a"})}};
    CHECK_THROWS_AS(eval::evaluate(run, {{"q1", "", {"a"}}}), DataError);
}

TEST_CASE("metrics match naive implementations on random permutations") {
    Rng rng(17);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto n = 1 + rng.below(8);
        Ids ids;
        for (std::uint64_t i = 0; i < n; ++i) {
            ids.push_back("a" + std::to_string(i));
        }
        rng.shuffle(ids);
        Ids relevant;
        for (std::uint64_t i = 0; i < n; ++i) {
            if (rng.bernoulli(0.3)) {
                relevant.push_back("a" + std::to_string(i));
            }
        }
        std::sort(relevant.begin(), relevant.end());
        const auto k = 1 + rng.below(10);
        CHECK(eval::reciprocal_rank(ids, relevant, k) == testing::naive_reciprocal_rank(ids, relevant, k));
        CHECK(eval::ndcg(ids, relevant, k) == testing::naive_ndcg(ids, relevant, k));
        CHECK(eval::precision_at_k(ids, relevant, k) == testing::naive_precision(ids, relevant, k));
    }
}

TEST_CASE("NDCG is 1 exactly when relevant items form a prefix") {
    Rng rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        const auto n = 1 + rng.below(7);
        Ids ids;
        for (std::uint64_t i = 0; i < n; ++i) {
            ids.push_back("a" + std::to_string(i));
        }
        rng.shuffle(ids);
        const auto n_rel = 1 + rng.below(n);
        Ids relevant(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_rel));
        std::sort(relevant.begin(), relevant.end());
        CHECK(eval::ndcg(ids, relevant, 10) == doctest::Approx(1.0).epsilon(1e-15));
        if (n_rel < n) {
            std::swap(ids[n_rel - 1], ids[n_rel]);
            CHECK(eval::ndcg(ids, relevant, 10) < 1.0);
        }
    }
}

TEST_CASE("metrics depend only on order") {
    const std::vector<corpus::Question> qs{{"q1", "", {"a2"}}};
    const eval::Run run{{"q1", {{"a1", 0.9}, {"a2", 0.5}, {"a3", 0.1}}}};
    eval::Run warped = run;
    for (auto& e : warped["q1"]) {
        e.score = std::exp(3.0 * e.score) + 7.0;
    }
    const auto a = eval::evaluate(run, qs);
    const auto b = eval::evaluate(warped, qs);
    CHECK(a.mrr == b.mrr);
    CHECK(a.ndcg == b.ndcg);
    CHECK(a.precision == b.precision);
}

TEST_CASE("MRR and P@1 coincide when hits are at rank 1 or absent") {
    const std::vector<corpus::Question> qs{{"q1", "", {"a1"}}, {"q2", "", {"zz"}}, {"q3", "", {"c1"}}};
    const eval::Run run{{"q1", ranked({"a1", "a2"})}, {"q2", ranked({"b1", "b2"})}, {"q3", ranked({"c1"})}};
    const auto r = eval::evaluate(run, qs);
    CHECK(r.mrr == r.precision);
}

TEST_CASE("run file format") {
    const eval::Run run{{"Q1", {{"A57", 1.4181}}}};
    CHECK(eval::format_run(run, "finrank") == "Q1 Q0 A57 1 1.418100 finrank\n");
    CHECK_THROWS_AS(eval::format_run(run, "two words"), InvalidArgument);
}

TEST_CASE("run files round-trip at printed precision") {
    testing::TempDir dir("run");
    const eval::Run run{{"q1", {{"a1", 2.25}, {"a2", 1.0 / 3.0}}}, {"q2", {{"b1", -0.5}}}};
    eval::write_run(run, dir.file("r.run"), "t");
    const auto back = eval::read_run(dir.file("r.run"));
    REQUIRE(back.size() == run.size());
    for (const auto& [qid, list] : run) {
        REQUIRE(back.at(qid).size() == list.size());
        for (std::size_t i = 0; i < list.size(); ++i) {
            CHECK(back.at(qid)[i].id == list[i].id);
            CHECK(std::abs(back.at(qid)[i].score - list[i].score) <= 5e-7);
        }
    }
    eval::write_run(back, dir.file("again.run"), "t");
    CHECK(eval::format_run(back, "t") == eval::format_run(run, "t"));
}

TEST_CASE("inconsistent run files are rejected") {
    testing::TempDir dir("run");
    {
        std::ofstream f(dir.file("shuffled.run"));
        f << "q1 Q0 a2 2 0.5 t\nq1 Q0 a1 1 0.9 t\n";
    }
    CHECK_THROWS_AS(eval::read_run(dir.file("shuffled.run")), DataError);
    {
        std::ofstream f(dir.file("rising.run"));
        f << "q1 Q0 a1 1 0.5 t\nq1 Q0 a2 2 0.9 t\n";
    }
    CHECK_THROWS_AS(eval::read_run(dir.file("rising.run")), DataError);
}

TEST_CASE("report renders as table and JSON") {
    const std::vector<corpus::Question> qs{{"q1", "", {"a1"}}};
    const auto r = eval::evaluate({{"q1", ranked({"a1"})}}, qs);
    CHECK(r.to_table().find("MRR@10") != std::string::npos);
    CHECK(r.to_json().find("\"mrr_at_k\": 1.0") != std::string::npos);
}
