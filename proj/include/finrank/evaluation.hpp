#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "finrank/corpus.hpp"

namespace finrank::eval {

/// question id -> ranking under evaluation.
using Run = std::map<std::string, RankedList>;

double reciprocal_rank(std::span<const std::string> ranked_ids, const std::vector<std::string>& relevant, std::size_t k);
/// Binary-relevance NDCG with DCG = rel_1 + sum_{i>=2} rel_i / log2(i+1).
double ndcg(std::span<const std::string> ranked_ids, const std::vector<std::string>& relevant, std::size_t k);
/// |top-k ∩ relevant| / k.
double precision_at_k(std::span<const std::string> ranked_ids, const std::vector<std::string>& relevant,
                      std::size_t k);

struct Cutoffs {
    std::size_t mrr = 10;
    std::size_t ndcg = 10;
    std::size_t precision = 1;
};

struct QuestionMetrics {
    std::string question_id;
    double rr = 0.0;
    double ndcg = 0.0;
    double precision = 0.0;
    bool in_run = false;
};

struct EvalReport {
    Cutoffs cutoffs;
    double mrr = 0.0;
    double ndcg = 0.0;
    double precision = 0.0;
    std::size_t question_count = 0;
    std::vector<QuestionMetrics> per_question;

    /// Aligned plain-text table.
    std::string to_table() const;
    std::string to_json() const;
};

/// Scores each question, treating questions missing from the run as zeros.
/// A run question outside `questions` is an error (no judgments).
EvalReport evaluate(const Run& run, const std::vector<corpus::Question>& questions, const Cutoffs& cutoffs = {});

/// `qid Q0 aid rank score tag` lines, rank from 1, score printed with 6 decimals.
void write_run(const Run& run, const std::string& path, const std::string& tag);
std::string format_run(const Run& run, const std::string& tag);
Run read_run(const std::string& path);

/// Judgments from a qrels file (`qid<TAB>aid`), as Questions with empty text.
std::vector<corpus::Question> read_qrels(const std::string& path);

} // namespace finrank::eval
