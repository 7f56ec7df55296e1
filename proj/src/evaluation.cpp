#include "finrank/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "finrank/binary_io.hpp"
#include "finrank/error.hpp"

namespace finrank::eval {

namespace {

bool contains(const std::vector<std::string>& sorted, const std::string& id) {
    return std::binary_search(sorted.begin(), sorted.end(), id);
}

std::vector<std::string> ids_of(const RankedList& list) {
    std::vector<std::string> ids;
    ids.reserve(list.size());
    for (const auto& e : list) {
        ids.push_back(e.id);
    }
    return ids;
}

void require_k(std::size_t k) {
    if (k == 0) {
        throw InvalidArgument("metric cutoff k must be >= 1");
    }
}

} // namespace

double reciprocal_rank(std::span<const std::string> ranked_ids, const std::vector<std::string>& relevant,
                       std::size_t k) {
    require_k(k);
    const auto n = std::min(k, ranked_ids.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (contains(relevant, ranked_ids[i])) {
            return 1.0 / static_cast<double>(i + 1);
        }
    }
    return 0.0;
}

double ndcg(std::span<const std::string> ranked_ids, const std::vector<std::string>& relevant, std::size_t k) {
    require_k(k);
    // Position 1 is undiscounted; position i >= 2 is divided by log2(i + 1).
    const auto discount = [](std::size_t pos) { return pos == 1 ? 1.0 : 1.0 / std::log2(static_cast<double>(pos) + 1.0); };
    double dcg = 0.0;
    const auto n = std::min(k, ranked_ids.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (contains(relevant, ranked_ids[i])) {
            dcg += discount(i + 1);
        }
    }
    double ideal = 0.0;
    const auto n_ideal = std::min(k, relevant.size());
    for (std::size_t i = 0; i < n_ideal; ++i) {
        ideal += discount(i + 1);
    }
    return ideal > 0.0 ? dcg / ideal : 0.0;
}

double precision_at_k(std::span<const std::string> ranked_ids, const std::vector<std::string>& relevant,
                      std::size_t k) {
    require_k(k);
    const auto n = std::min(k, ranked_ids.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        hits += contains(relevant, ranked_ids[i]) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

EvalReport evaluate(const Run& run, const std::vector<corpus::Question>& questions, const Cutoffs& cutoffs) {
    require_k(cutoffs.mrr);
    require_k(cutoffs.ndcg);
    require_k(cutoffs.precision);
    std::map<std::string, const corpus::Question*> judged;
    for (const auto& q : questions) {
        judged.emplace(q.id, &q);
    }
    for (const auto& [qid, _] : run) {
        if (!judged.count(qid)) {
            throw DataError("run question " + qid + " has no relevance judgments");
        }
    }

    EvalReport report;
    report.cutoffs = cutoffs;
    for (const auto& [qid, q] : judged) {
        QuestionMetrics m;
        m.question_id = qid;
        auto it = run.find(qid);
        if (it != run.end()) {
            m.in_run = true;
            const auto ids = ids_of(it->second);
            m.rr = reciprocal_rank(ids, q->relevant_ids, cutoffs.mrr);
            m.ndcg = ndcg(ids, q->relevant_ids, cutoffs.ndcg);
            m.precision = precision_at_k(ids, q->relevant_ids, cutoffs.precision);
        }
        report.mrr += m.rr;
        report.ndcg += m.ndcg;
        report.precision += m.precision;
        report.per_question.push_back(std::move(m));
    }
    report.question_count = report.per_question.size();
    if (report.question_count > 0) {
        const auto n = static_cast<double>(report.question_count);
        report.mrr /= n;
        report.ndcg /= n;
        report.precision /= n;
    }
    return report;
}

std::string EvalReport::to_table() const {
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-14s %8s\n", "metric", "value");
    out += buf;
    const auto row = [&](const std::string& name, double v) {
        std::snprintf(buf, sizeof buf, "%-14s %8.4f\n", name.c_str(), v);
        out += buf;
    };
    row("MRR@" + std::to_string(cutoffs.mrr), mrr);
    row("NDCG@" + std::to_string(cutoffs.ndcg), ndcg);
    row("P@" + std::to_string(cutoffs.precision), precision);
    std::snprintf(buf, sizeof buf, "%-14s %8zu\n", "questions", question_count);
    out += buf;
    return out;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["mrr_at_k"] = mrr;
    j["ndcg_at_k"] = ndcg;
    j["precision_at_k"] = precision;
    j["k"] = {{"mrr", cutoffs.mrr}, {"ndcg", cutoffs.ndcg}, {"precision", cutoffs.precision}};
    j["question_count"] = question_count;
    auto& per = j["per_question"] = nlohmann::ordered_json::array();
    for (const auto& m : per_question) {
        per.push_back({{"question_id", m.question_id},
                       {"rr", m.rr},
                       {"ndcg", m.ndcg},
                       {"precision", m.precision},
                       {"in_run", m.in_run}});
    }
    return j.dump(2);
}

std::string format_run(const Run& run, const std::string& tag) {
    if (tag.empty() || tag.find_first_of(" \t\n") != std::string::npos) {
        throw InvalidArgument("run tag must be a non-empty token");
    }
    std::string out;
    char buf[64];
    for (const auto& [qid, list] : run) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.6f", list[i].score);
            out += qid + " Q0 " + list[i].id + ' ' + std::to_string(i + 1) + ' ' + buf + ' ' + tag + '\n';
        }
    }
    return out;
}

void write_run(const Run& run, const std::string& path, const std::string& tag) {
    io::write_file(path, format_run(run, tag));
}

Run read_run(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    Run run;
    std::map<std::string, std::set<std::string>> seen;
    std::map<std::string, std::size_t> last_rank;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto where = path + ":" + std::to_string(lineno) + ": ";
        std::istringstream ss(line);
        std::string qid, q0, aid, rank_s, score_s, tag, extra;
        if (!(ss >> qid >> q0 >> aid >> rank_s >> score_s >> tag) || (ss >> extra)) {
            throw DataError(where + "expected 'qid Q0 aid rank score tag'");
        }
        std::size_t rank = 0;
        double score = 0.0;
        try {
            std::size_t used = 0;
            rank = std::stoul(rank_s, &used);
            if (used != rank_s.size()) {
                throw std::invalid_argument(rank_s);
            }
            score = std::stod(score_s, &used);
            if (used != score_s.size()) {
                throw std::invalid_argument(score_s);
            }
        } catch (const std::logic_error&) {
            throw DataError(where + "bad rank or score");
        }
        auto& list = run[qid];
        const auto expected = last_rank[qid] + 1;
        if (rank != expected) {
            throw DataError(where + "rank " + std::to_string(rank) + " out of order for " + qid + " (expected " +
                            std::to_string(expected) + ")");
        }
        if (!list.empty() && score > list.back().score) {
            throw DataError(where + "score increases with rank for " + qid);
        }
        if (!seen[qid].insert(aid).second) {
            throw DataError(where + "duplicate answer " + aid + " for " + qid);
        }
        last_rank[qid] = rank;
        list.push_back({aid, score});
    }
    return run;
}

std::vector<corpus::Question> read_qrels(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    std::map<std::string, std::set<std::string>> truth;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected qid<TAB>aid");
        }
        const auto qid = line.substr(0, tab);
        if (lineno == 1 && qid == "qid") {
            continue;
        }
        truth[qid].insert(line.substr(tab + 1));
    }
    std::vector<corpus::Question> out;
    for (auto& [qid, ids] : truth) {
        out.push_back({qid, "", {ids.begin(), ids.end()}});
    }
    return out;
}

} // namespace finrank::eval
