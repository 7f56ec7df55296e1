#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "finrank/autograd.hpp"
#include "finrank/corpus.hpp"
#include "finrank/index.hpp"
#include "finrank/synthetic.hpp"
#include "finrank/textenc.hpp"
#include "finrank/training.hpp"

namespace finrank::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------- oracles

/// RSV straight from the formula over raw token lists, no index involved.
double naive_bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                  std::size_t doc, double k1, double b);

double naive_reciprocal_rank(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant,
                             std::size_t k);
double naive_ndcg(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant, std::size_t k);
double naive_precision(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant,
                       std::size_t k);

struct GradCheck {
    double worst_rel_error = 0.0;
    std::string worst_param;
    double worst_abs_gap = 0.0;
    std::size_t checked = 0;
    std::size_t nonzero = 0; ///< entries with |analytic| > 1e-6
};

/// Compares tape gradients of `loss` against central differences (step 1e-5)
/// on up to `per_tensor` entries of every parameter. An entry agrees when
/// |analytic - numeric| <= 1e-3 * max(|analytic|, |numeric|) or the absolute
/// gap is below 1e-8; worst_rel_error reports the largest relative gap among
/// entries above that absolute floor.
GradCheck check_gradients(neural::ParameterStore& params,
                          const std::function<neural::Var(neural::Tape&, const neural::ParameterStore&)>& loss,
                          std::size_t per_tensor, std::uint64_t seed);

struct NamedGradCheck {
    std::string name;
    GradCheck result;
};

/// Finite-difference checks of QA-LSTM + hinge and of the cross-encoder with
/// pointwise, pairwise and masked-LM losses, at micro sizes (vocab 20,
/// sequences of at most 6 tokens, d_model 8, 2 layers), dropout active with a
/// fixed mask.
std::vector<NamedGradCheck> model_gradient_suite(std::uint64_t seed);

// ---------------------------------------------------------------- synthetic runs

/// Vocabulary over every answer and question of the given benchmarks.
textenc::Vocabulary synthetic_vocab(const std::vector<const synthetic::Benchmark*>& benchmarks);

CandidateLists bm25_candidates(const index::InvertedIndex& idx, const std::vector<corpus::Question>& questions,
                               std::size_t pool);

/// Micro encoder used by the gradient and checkpoint tests.
neural::EncoderConfig micro_encoder(std::size_t vocab_size);

struct BenchmarkResult {
    double bm25_mrr = 0.0;
    double pipeline_mrr = 0.0;
    double pipeline_top1 = 0.0; ///< share of test questions with the planted answer at rank 1
    std::vector<training::EpochRecord> history;
    double seconds = 0.0;
};

/// 60 questions / 300 answers, split 36/12/12, pointwise cross-encoder
/// trained for `epochs` on a BM25 pool of 50, scored on the test split.
BenchmarkResult run_keyword_benchmark(std::uint64_t seed, std::size_t epochs = 10, double lr = 1e-3);

/// Epoch histories of a short training run on the keyword benchmark.
std::vector<training::EpochRecord> keyword_loss_trend(std::uint64_t seed, training::Objective objective,
                                                      std::size_t epochs, double lr);

struct TandaComparison {
    double tanda_mrr = 0.0;
    double target_only_mrr = 0.0;
    double bm25_mrr = 0.0;
    bool stage_boundary_identical = false;
};

/// General domain 200 questions, target domain 30 questions sharing topic
/// words; transfer-and-adapt against target-only training from the same
/// initialization and seed. With `verify_boundary`, stage 1 is retrained in
/// memory and compared with the checkpoint written at the stage boundary.
TandaComparison run_tanda_comparison(std::uint64_t seed, const std::string& work_dir, bool verify_boundary = false);

/// Writes a synthetic benchmark as questions/answers/qrels TSV files.
void write_benchmark_tsv(const synthetic::Benchmark& b, const std::string& dir);

} // namespace finrank::testing
