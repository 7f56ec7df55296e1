#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "finrank/checkpoint.hpp"
#include "finrank/corpus.hpp"
#include "finrank/models.hpp"
#include "finrank/textenc.hpp"

namespace finrank::training {

/// Token ids of every question and answer a run may touch.
struct TextTable {
    std::unordered_map<std::string, std::vector<textenc::TokenId>> questions;
    std::unordered_map<std::string, std::vector<textenc::TokenId>> answers;
    std::uint64_t vocab_hash = 0;

    static TextTable build(const std::vector<corpus::Question>& questions, const corpus::AnswerCorpus& corpus,
                           const textenc::Vocabulary& vocab);

    const std::vector<textenc::TokenId>& question(const std::string& id) const;
    const std::vector<textenc::TokenId>& answer(const std::string& id) const;
};

/// Training samples plus optional validation samples of the same kind.
struct TrainData {
    const TextTable* texts = nullptr;
    corpus::SampleSet train;
    std::optional<corpus::SampleSet> valid;
};

/// Reports progress once per epoch.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fine-tunes a cross-encoder (pointwise or pairwise objective). `params`
/// must hold the encoder body; a relevance head is added when missing.
/// Returns the epoch with minimal validation loss (training loss when no
/// validation set is given), ties going to the earliest epoch.
Checkpoint train_cross_encoder(neural::ParameterStore params, const neural::EncoderConfig& model,
                               const TrainData& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Siamese biLSTM with hinge loss over triples.
Checkpoint train_qalstm(neural::ParameterStore params, const neural::QaLstmConfig& model, const TrainData& data,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Masked-LM further pre-training on single answers ([CLS] a [SEP]). The
/// returned checkpoint holds encoder weights only (kind = encoder).
Checkpoint pretrain_mlm(neural::ParameterStore encoder_params, const neural::EncoderConfig& model,
                        const corpus::AnswerCorpus& corpus, const textenc::Vocabulary& vocab,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

struct TandaResult {
    Checkpoint transfer; ///< stage 1, as reloaded from disk
    Checkpoint adapt;    ///< stage 2
    std::string transfer_path;
    std::string adapt_path;
};

/// Stage 1 fine-tunes on the general data; its best checkpoint is saved,
/// reloaded, and seeds stage 2 on the target data. Both checkpoints are
/// written under `out_dir` as transfer.frck and adapt.frck.
TandaResult transfer_and_adapt(neural::ParameterStore encoder_params, const neural::EncoderConfig& model,
                               const TrainData& general, const TrainData& target, const TrainConfig& transfer_config,
                               const TrainConfig& adapt_config, const std::string& out_dir,
                               const EpochCallback& on_epoch = {});

/// Mean per-sample loss of a cross-encoder in eval mode.
double evaluate_cross_encoder_loss(const neural::ParameterStore& params, const neural::EncoderConfig& model,
                                   const TextTable& texts, const corpus::SampleSet& samples, const TrainConfig& config);

} // namespace finrank::training
