#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finrank/checkpoint.hpp"
#include "finrank/corpus.hpp"
#include "finrank/evaluation.hpp"
#include "finrank/index.hpp"
#include "finrank/models.hpp"
#include "finrank/textenc.hpp"

namespace finrank::rankers {

/// Relevance of an answer to a question; both texts already cleaned.
class Scorer {
public:
    virtual ~Scorer() = default;

    virtual double score(std::string_view question, std::string_view answer) const = 0;

    /// Scores several answers for one question. Results match score() one by one.
    virtual std::vector<double> score_many(std::string_view question,
                                           std::span<const std::string_view> answers) const;

    virtual std::string name() const = 0;
};

/// RSV against the index's collection statistics.
class Bm25Scorer : public Scorer {
public:
    Bm25Scorer(const index::InvertedIndex& index, index::Bm25Params params = {});

    double score(std::string_view question, std::string_view answer) const override;
    std::string name() const override { return "bm25"; }

private:
    const index::InvertedIndex* index_;
    index::Bm25Params params_;
};

/// Cosine between siamese biLSTM encodings.
class QaLstmScorer : public Scorer {
public:
    QaLstmScorer(neural::ParameterStore params, neural::QaLstmConfig config, textenc::Vocabulary vocab);

    double score(std::string_view question, std::string_view answer) const override;
    std::vector<double> score_many(std::string_view question,
                                   std::span<const std::string_view> answers) const override;
    std::string name() const override { return "qa_lstm"; }

private:
    neural::Matrix encode(std::string_view text) const;

    neural::ParameterStore params_;
    neural::QaLstmConfig config_;
    textenc::Vocabulary vocab_;
};

/// Relevance probability of [CLS] q [SEP] a [SEP].
class CrossEncoderScorer : public Scorer {
public:
    CrossEncoderScorer(neural::ParameterStore params, neural::EncoderConfig config, textenc::Vocabulary vocab,
                       std::size_t max_len);

    double score(std::string_view question, std::string_view answer) const override;
    std::string name() const override { return "cross_encoder"; }

private:
    neural::ParameterStore params_;
    neural::EncoderConfig config_;
    textenc::Vocabulary vocab_;
    std::size_t max_len_;
};

/// Builds the scorer a checkpoint describes; checks the vocabulary hash.
std::unique_ptr<Scorer> scorer_from_checkpoint(const training::Checkpoint& ckpt, const textenc::Vocabulary& vocab,
                                               std::size_t max_len);

struct RankedAnswers {
    std::string question_id;
    RankedList answers; ///< scores non-increasing; ties by id ascending
};

/// Scores every candidate, sorts, keeps top_k. Unknown ids throw DataError.
RankedAnswers rerank(const Scorer& scorer, const corpus::Question& question,
                     std::span<const std::string> candidate_ids, const corpus::AnswerCorpus& corpus,
                     std::size_t top_k);

/// BM25 retrieval of pool_size candidates followed by rerank to top_k.
RankedAnswers answer_pipeline(const corpus::Question& question, const index::InvertedIndex& index,
                              const corpus::AnswerCorpus& corpus, const Scorer& scorer, std::size_t pool_size = 50,
                              std::size_t top_k = 10, const index::Bm25Params& params = {});

/// answer_pipeline over many questions, as a run.
eval::Run pipeline_run(const std::vector<corpus::Question>& questions, const index::InvertedIndex& index,
                       const corpus::AnswerCorpus& corpus, const Scorer& scorer, std::size_t pool_size = 50,
                       std::size_t top_k = 10, const index::Bm25Params& params = {});

/// Plain BM25 retrieval over many questions, as a run.
eval::Run retrieval_run(const std::vector<corpus::Question>& questions, const index::InvertedIndex& index,
                        std::size_t k, const index::Bm25Params& params = {});

} // namespace finrank::rankers
