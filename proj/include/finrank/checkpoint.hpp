#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "finrank/autograd.hpp"
#include "finrank/models.hpp"
#include "finrank/neural.hpp"

namespace finrank::training {

enum class Objective { pointwise, pairwise, hinge, mlm };

std::string to_string(Objective objective);
Objective parse_objective(std::string_view name);

/// Hyperparameters for one training run.
struct TrainConfig {
    Objective objective = Objective::pointwise;
    std::size_t batch_size = 16;
    double base_lr = 3e-6;
    std::size_t epochs = 3;
    std::size_t max_len = 128;
    double weight_decay = 0.01;
    std::int64_t warmup_steps = 10000;
    std::uint64_t seed = 42;
    /// Overrides the model's configured dropout when set.
    std::optional<double> dropout;
    neural::PairwiseWeights pairwise;
    double hinge_margin = 0.2;
    double mask_rate = 0.15;

    void validate() const;

    /// 3 epochs, batch 64, lr 1e-3, hinge margin 0.2, no warmup or decay.
    static TrainConfig qa_lstm_defaults();
    /// 1 epoch, batch 8, masked-LM objective.
    static TrainConfig mlm_defaults();
};

enum class ModelKind { cross_encoder, encoder, qa_lstm };

std::string to_string(ModelKind kind);

struct EpochRecord {
    std::size_t epoch = 0; ///< 1-based
    double train_loss = 0.0;
    double valid_loss = 0.0;
    bool operator==(const EpochRecord&) const = default;
};

using ModelConfig = std::variant<neural::EncoderConfig, neural::QaLstmConfig>;

/// Saved model state. Tensor values are kept float32-representable so that
/// the 32-bit file encoding round-trips exactly.
struct Checkpoint {
    ModelKind kind = ModelKind::cross_encoder;
    ModelConfig model;
    std::optional<TrainConfig> train;
    std::uint64_t vocab_hash = 0;
    neural::ParameterStore params;
    std::optional<neural::AdamState> optimizer;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0; ///< 1-based; 0 when no training ran

    const neural::EncoderConfig& encoder_config() const;
    const neural::QaLstmConfig& qa_lstm_config() const;
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Rounds every value to the nearest float32.
void round_to_float(neural::ParameterStore& params);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Throws DataError when the checkpoint was trained against another vocabulary,
/// unless `allow_mismatch`.
void check_vocab(const Checkpoint& ckpt, std::uint64_t vocab_hash, bool allow_mismatch = false);

/// FNV-1a over tensor names, shapes and raw values.
std::uint64_t params_hash(const neural::ParameterStore& params);

} // namespace finrank::training
