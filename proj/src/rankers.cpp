#include "finrank/rankers.hpp"

#include <algorithm>

#include "finrank/error.hpp"

namespace finrank::rankers {

std::vector<double> Scorer::score_many(std::string_view question, std::span<const std::string_view> answers) const {
    std::vector<double> out;
    out.reserve(answers.size());
    for (auto a : answers) {
        out.push_back(score(question, a));
    }
    return out;
}

Bm25Scorer::Bm25Scorer(const index::InvertedIndex& index, index::Bm25Params params)
    : index_(&index), params_(params) {
    params_.validate();
}

double Bm25Scorer::score(std::string_view question, std::string_view answer) const {
    const auto q = textenc::tokenize(question);
    const auto a = textenc::tokenize(answer);
    return index::bm25_score_text(*index_, q, a, params_);
}

QaLstmScorer::QaLstmScorer(neural::ParameterStore params, neural::QaLstmConfig config, textenc::Vocabulary vocab)
    : params_(std::move(params)), config_(config), vocab_(std::move(vocab)) {
    config_.validate();
    if (vocab_.size() != config_.vocab_size) {
        throw InvalidArgument("QA-LSTM vocab_size differs from the vocabulary");
    }
}

neural::Matrix QaLstmScorer::encode(std::string_view text) const {
    const auto tokens = textenc::tokenize(text);
    auto enc = textenc::encode_single(tokens, vocab_, config_.max_len);
    return neural::bilstm_encode(params_, config_, enc);
}

double QaLstmScorer::score(std::string_view question, std::string_view answer) const {
    const auto q = encode(question);
    const auto a = encode(answer);
    return neural::cosine_similarity(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())),
                                     std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

std::vector<double> QaLstmScorer::score_many(std::string_view question,
                                             std::span<const std::string_view> answers) const {
    const auto q = encode(question);
    const std::span<const double> qs(q.data(), static_cast<std::size_t>(q.size()));
    std::vector<double> out;
    out.reserve(answers.size());
    for (auto text : answers) {
        const auto a = encode(text);
        out.push_back(neural::cosine_similarity(qs, std::span<const double>(a.data(), static_cast<std::size_t>(a.size()))));
    }
    return out;
}

CrossEncoderScorer::CrossEncoderScorer(neural::ParameterStore params, neural::EncoderConfig config,
                                       textenc::Vocabulary vocab, std::size_t max_len)
    : params_(std::move(params)), config_(config), vocab_(std::move(vocab)), max_len_(max_len) {
    config_.validate();
    if (vocab_.size() != config_.vocab_size) {
        throw InvalidArgument("encoder vocab_size differs from the vocabulary");
    }
    if (max_len_ < 4 || max_len_ > config_.max_len) {
        throw InvalidArgument("cross-encoder max_len must lie in [4, " + std::to_string(config_.max_len) + "]");
    }
    if (!params_.contains("head.weight")) {
        throw InvalidArgument("cross-encoder parameters lack a relevance head");
    }
}

double CrossEncoderScorer::score(std::string_view question, std::string_view answer) const {
    const auto q = textenc::tokenize(question);
    const auto a = textenc::tokenize(answer);
    return neural::relevance_probability(params_, config_, textenc::encode_pair(q, a, vocab_, max_len_));
}

std::unique_ptr<Scorer> scorer_from_checkpoint(const training::Checkpoint& ckpt, const textenc::Vocabulary& vocab,
                                               std::size_t max_len) {
    training::check_vocab(ckpt, vocab.hash());
    switch (ckpt.kind) {
    case training::ModelKind::cross_encoder:
        return std::make_unique<CrossEncoderScorer>(ckpt.params, ckpt.encoder_config(), vocab, max_len);
    case training::ModelKind::qa_lstm:
        return std::make_unique<QaLstmScorer>(ckpt.params, ckpt.qa_lstm_config(), vocab);
    case training::ModelKind::encoder:
        break;
    }
    throw InvalidArgument("a pre-trained encoder has no relevance head; fine-tune it before re-ranking");
}

RankedAnswers rerank(const Scorer& scorer, const corpus::Question& question,
                     std::span<const std::string> candidate_ids, const corpus::AnswerCorpus& corpus,
                     std::size_t top_k) {
    std::vector<std::string_view> texts;
    texts.reserve(candidate_ids.size());
    std::vector<std::string> seen(candidate_ids.begin(), candidate_ids.end());
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
        throw InvalidArgument("candidate list for question '" + question.id + "' repeats an id");
    }
    for (const auto& id : candidate_ids) {
        if (!corpus.contains(id)) {
            throw DataError("candidate answer '" + id + "' is not in the corpus");
        }
        texts.push_back(corpus.at(id).text);
    }
    const auto scores = scorer.score_many(question.text, texts);

    RankedAnswers out;
    out.question_id = question.id;
    out.answers.reserve(candidate_ids.size());
    for (std::size_t i = 0; i < candidate_ids.size(); ++i) {
        out.answers.push_back({candidate_ids[i], scores[i]});
    }
    std::sort(out.answers.begin(), out.answers.end(), [](const ScoredId& a, const ScoredId& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    if (out.answers.size() > top_k) {
        out.answers.resize(top_k);
    }
    return out;
}

RankedAnswers answer_pipeline(const corpus::Question& question, const index::InvertedIndex& index,
                              const corpus::AnswerCorpus& corpus, const Scorer& scorer, std::size_t pool_size,
                              std::size_t top_k, const index::Bm25Params& params) {
    const auto tokens = textenc::tokenize(question.text);
    const auto pool = index::retrieve(index, tokens, pool_size, params);
    std::vector<std::string> ids;
    ids.reserve(pool.size());
    for (const auto& s : pool) {
        ids.push_back(s.id);
    }
    return rerank(scorer, question, ids, corpus, top_k);
}

eval::Run pipeline_run(const std::vector<corpus::Question>& questions, const index::InvertedIndex& index,
                       const corpus::AnswerCorpus& corpus, const Scorer& scorer, std::size_t pool_size,
                       std::size_t top_k, const index::Bm25Params& params) {
    eval::Run run;
    for (const auto& q : questions) {
        run[q.id] = answer_pipeline(q, index, corpus, scorer, pool_size, top_k, params).answers;
    }
    return run;
}

eval::Run retrieval_run(const std::vector<corpus::Question>& questions, const index::InvertedIndex& index,
                        std::size_t k, const index::Bm25Params& params) {
    eval::Run run;
    for (const auto& q : questions) {
        run[q.id] = index::retrieve(index, textenc::tokenize(q.text), k, params);
    }
    return run;
}

} // namespace finrank::rankers
