#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finrank/corpus.hpp"

namespace finrank::synthetic {

/// Shape of a generated keyword benchmark.
///
/// Every question carries a keyword that appears in exactly one answer, its
/// relevant answer; by default five questions share each keyword and answer.
/// Questions also draw common topic words from a shared pool. Distractor
/// answers repeat those topic words, which lets them outscore the relevant
/// answer under BM25.
struct Config {
    std::size_t n_questions = 60;
    std::size_t n_answers = 300;
    std::size_t topic_pool = 40;
    std::size_t filler_pool = 80;
    std::size_t topics_per_question = 3;
    std::size_t question_fillers = 1;
    std::size_t answer_fillers = 6;
    /// Questions sharing each keyword; 1 makes every keyword unique.
    std::size_t keyword_uses = 5;
    /// Questions with the same keyword share one relevant answer, so each
    /// keyword still occurs in a single answer.
    bool shared_answers = true;
    /// Prefix that keeps the vocabularies of different domains disjoint.
    std::string domain = "s";
    /// When non-empty, topic words come from this prefix with a fixed seed,
    /// so benchmarks for different domains share them.
    std::string topic_domain;
    std::uint64_t seed = 7;

    void validate() const;
};

struct Benchmark {
    corpus::AnswerCorpus corpus;
    std::vector<corpus::Question> questions;
    /// keywords[i] is planted in questions[i] and its relevant answer.
    std::vector<std::string> keywords;
};

Benchmark generate(const Config& config);

/// Word list with `n` distinct pseudo-words, all starting with `prefix`.
std::vector<std::string> make_words(std::size_t n, const std::string& prefix, std::uint64_t seed);

} // namespace finrank::synthetic
