#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "finrank/error.hpp"
#include "finrank/evaluation.hpp"
#include "finrank/models.hpp"
#include "finrank/rankers.hpp"
#include "finrank/rng.hpp"

namespace finrank::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()) + counter++);
    for (;;) {
        path_ = fs::temp_directory_path() / ("finrank-" + tag + "-" + std::to_string(rng.below(1u << 30)));
        if (fs::create_directories(path_)) {
            break;
        }
    }
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

// ---------------------------------------------------------------- oracles

double naive_bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                  std::size_t doc, double k1, double b) {
    double total_len = 0.0;
    for (const auto& d : docs) {
        total_len += static_cast<double>(d.size());
    }
    const double n = static_cast<double>(docs.size());
    const double avg = total_len / n;
    const double len = static_cast<double>(docs[doc].size());
    double score = 0.0;
    for (const auto& term : query) {
        double df = 0.0;
        for (const auto& d : docs) {
            if (std::find(d.begin(), d.end(), term) != d.end()) {
                df += 1.0;
            }
        }
        const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), term));
        if (tf == 0.0) {
            continue;
        }
        score += std::log(n / df) * ((k1 + 1.0) * tf) / (k1 * ((1.0 - b) + b * len / avg) + tf);
    }
    return score;
}

namespace {

bool is_relevant(const std::vector<std::string>& relevant, const std::string& id) {
    return std::find(relevant.begin(), relevant.end(), id) != relevant.end();
}

} // namespace

double naive_reciprocal_rank(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant,
                             std::size_t k) {
    for (std::size_t rank = 1; rank <= ranked.size() && rank <= k; ++rank) {
        if (is_relevant(relevant, ranked[rank - 1])) {
            return 1.0 / static_cast<double>(rank);
        }
    }
    return 0.0;
}

double naive_ndcg(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant, std::size_t k) {
    double dcg = 0.0;
    for (std::size_t rank = 1; rank <= ranked.size() && rank <= k; ++rank) {
        if (is_relevant(relevant, ranked[rank - 1])) {
            dcg += 1.0 / std::log2(static_cast<double>(rank + 1));
        }
    }
    double ideal = 0.0;
    for (std::size_t rank = 1; rank <= relevant.size() && rank <= k; ++rank) {
        ideal += 1.0 / std::log2(static_cast<double>(rank + 1));
    }
    return ideal == 0.0 ? 0.0 : dcg / ideal;
}

double naive_precision(const std::vector<std::string>& ranked, const std::vector<std::string>& relevant,
                       std::size_t k) {
    double hits = 0.0;
    for (std::size_t rank = 1; rank <= ranked.size() && rank <= k; ++rank) {
        hits += is_relevant(relevant, ranked[rank - 1]) ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(k);
}

GradCheck check_gradients(neural::ParameterStore& params,
                          const std::function<neural::Var(neural::Tape&, const neural::ParameterStore&)>& loss,
                          std::size_t per_tensor, std::uint64_t seed) {
    constexpr double kStep = 1e-5;
    constexpr double kAbsFloor = 1e-8;

    neural::Tape tape;
    auto root = loss(tape, params);
    tape.backward(root);
    const auto grads = tape.gradients();

    const auto eval = [&]() {
        neural::Tape t;
        return loss(t, params).scalar();
    };

    GradCheck out;
    Rng rng(seed);
    for (auto& [name, tensor] : params) {
        const auto size = static_cast<std::uint64_t>(tensor.size());
        std::vector<std::uint64_t> entries;
        if (size <= per_tensor) {
            for (std::uint64_t i = 0; i < size; ++i) {
                entries.push_back(i);
            }
        } else {
            std::set<std::uint64_t> picked;
            while (picked.size() < per_tensor) {
                picked.insert(rng.below(size));
            }
            entries.assign(picked.begin(), picked.end());
        }
        const bool has_grad = grads.contains(name);
        for (const auto e : entries) {
            double& w = tensor.data()[e];
            const double saved = w;
            w = saved + kStep;
            const double up = eval();
            w = saved - kStep;
            const double down = eval();
            w = saved;
            const double numeric = (up - down) / (2.0 * kStep);
            const double analytic = has_grad ? grads.at(name).data()[e] : 0.0;
            const double gap = std::abs(analytic - numeric);
            ++out.checked;
            out.worst_abs_gap = std::max(out.worst_abs_gap, gap);
            out.nonzero += std::abs(analytic) > 1e-6;
            if (gap <= kAbsFloor) {
                continue;
            }
            const double rel = gap / std::max(std::abs(analytic), std::abs(numeric));
            if (rel > out.worst_rel_error) {
                out.worst_rel_error = rel;
                out.worst_param = name;
            }
        }
    }
    return out;
}

namespace {

// Redraws weights in [-0.5, 0.5] so gradients are well above round-off;
// layer-norm gains stay near 1.
void widen(neural::ParameterStore& params, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, m] : params) {
        const bool gain = name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = gain ? 1.0 + rng.uniform(-0.2, 0.2) : rng.uniform(-0.5, 0.5);
        }
    }
}

} // namespace

std::vector<NamedGradCheck> model_gradient_suite(std::uint64_t seed) {
    using neural::Tape;
    using neural::Var;
    using textenc::TokenId;
    constexpr std::size_t kVocab = 20;
    constexpr std::size_t kSeq = 6;
    constexpr std::size_t kPerTensor = 12;
    std::vector<NamedGradCheck> out;

    neural::EncoderConfig ec;
    ec.n_layers = 2;
    ec.d_model = 8;
    ec.n_heads = 2;
    ec.d_ff = 16;
    ec.max_len = kSeq;
    ec.vocab_size = kVocab;
    const std::vector<TokenId> q1{5, 9}, a1{7, 12}, a2{15}, q2{6};
    const auto pos = textenc::encode_pair_ids(q1, a1, kSeq);
    const auto neg = textenc::encode_pair_ids(q1, a2, kSeq);
    const auto other = textenc::encode_pair_ids(q2, a1, kSeq);

    {
        auto params = neural::make_encoder_params(ec, seed);
        widen(params, seed + 1);
        out.push_back({"cross-encoder + pointwise",
                       check_gradients(params,
                                       [&](Tape& t, const neural::ParameterStore& p) {
                                           Rng drop(seed);
                                           Var y1 = neural::relevance_probability(t, p, ec, pos, &drop);
                                           Var y2 = neural::relevance_probability(t, p, ec, other, &drop);
                                           const std::vector<int> labels{1, 0};
                                           return neural::pointwise_loss(neural::concat_rows({y1, y2}), labels);
                                       },
                                       kPerTensor, seed)});
    }
    {
        auto params = neural::make_encoder_params(ec, seed + 2);
        widen(params, seed + 3);
        out.push_back({"cross-encoder + pairwise",
                       check_gradients(params,
                                       [&](Tape& t, const neural::ParameterStore& p) {
                                           Rng drop(seed);
                                           Var yp = neural::relevance_probability(t, p, ec, pos, &drop);
                                           Var yn = neural::relevance_probability(t, p, ec, neg, &drop);
                                           return neural::pairwise_loss(yp, yn, {0.5, 0.5, 1.5});
                                       },
                                       kPerTensor, seed)});
    }
    {
        auto params = neural::make_encoder_params(ec, seed + 4, {false, true});
        widen(params, seed + 5);
        const std::vector<TokenId> text{5, 8, 11, 14};
        Rng mask_rng(seed);
        const auto masked = neural::mask_tokens(textenc::encode_single_segment(text, kSeq), kVocab, mask_rng, 0.5);
        std::vector<std::size_t> rows;
        std::vector<neural::MaskedTarget> targets;
        for (std::size_t k = 0; k < masked.targets.size(); ++k) {
            rows.push_back(masked.targets[k].position);
            targets.push_back({k, masked.targets[k].target});
        }
        out.push_back({"cross-encoder + masked LM",
                       check_gradients(params,
                                       [&](Tape& t, const neural::ParameterStore& p) {
                                           Rng drop(seed);
                                           auto enc = neural::encoder_forward(t, p, ec, masked.input, &drop);
                                           return neural::mlm_loss(neural::mlm_logits(t, p, enc.states, rows), targets);
                                       },
                                       kPerTensor, seed)});
    }
    {
        neural::QaLstmConfig lc;
        lc.vocab_size = kVocab;
        lc.embedding_dim = 4;
        lc.hidden = 3;
        lc.max_len = kSeq;
        auto params = neural::make_qalstm_params(lc, seed + 6);
        widen(params, seed + 7);
        const auto seq = [&](std::vector<TokenId> ids) {
            textenc::SeqEncoding e;
            e.ids = std::move(ids);
            e.mask.assign(e.ids.size(), 1);
            while (e.ids.size() < kSeq) {
                e.ids.push_back(textenc::kPad);
                e.mask.push_back(0);
            }
            return e;
        };
        const auto sq = seq({5, 9, 3}), sp = seq({7, 12, 9, 2, 10}), sn = seq({15, 4});
        out.push_back({"QA-LSTM + hinge",
                       check_gradients(params,
                                       [&](Tape& t, const neural::ParameterStore& p) {
                                           Rng drop(seed);
                                           Var vq = neural::bilstm_forward(t, p, lc, sq, &drop);
                                           Var vp = neural::bilstm_forward(t, p, lc, sp, &drop);
                                           Var vn = neural::bilstm_forward(t, p, lc, sn, &drop);
                                           return neural::hinge_loss(neural::cosine(vq, vp), neural::cosine(vq, vn), 2.5);
                                       },
                                       kPerTensor, seed)});
    }
    return out;
}

// ---------------------------------------------------------------- synthetic runs

textenc::Vocabulary synthetic_vocab(const std::vector<const synthetic::Benchmark*>& benchmarks) {
    std::vector<std::vector<std::string>> tokens;
    for (const auto* b : benchmarks) {
        for (const auto& [id, a] : b->corpus) {
            tokens.push_back(textenc::tokenize(a.text));
        }
        for (const auto& q : b->questions) {
            tokens.push_back(textenc::tokenize(q.text));
        }
    }
    return textenc::Vocabulary::build(tokens);
}

CandidateLists bm25_candidates(const index::InvertedIndex& idx, const std::vector<corpus::Question>& questions,
                               std::size_t pool) {
    CandidateLists out;
    for (const auto& q : questions) {
        out[q.id] = index::retrieve(idx, textenc::tokenize(q.text), pool);
    }
    return out;
}

neural::EncoderConfig micro_encoder(std::size_t vocab_size) {
    neural::EncoderConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_len = 16;
    c.vocab_size = vocab_size;
    return c;
}

namespace {

struct KeywordSetup {
    synthetic::Benchmark bench;
    corpus::DatasetSplit split;
    textenc::Vocabulary vocab;
    index::InvertedIndex idx;
    training::TextTable texts;

    explicit KeywordSetup(std::uint64_t seed) {
        synthetic::Config sc;
        sc.seed = seed;
        bench = synthetic::generate(sc);
        split = corpus::split_questions(bench.questions, 36, 12, 12, seed);
        vocab = synthetic_vocab({&bench});
        idx = index::InvertedIndex::build(bench.corpus);
        texts = training::TextTable::build(bench.questions, bench.corpus, vocab);
    }

    training::TrainData data(corpus::SampleMode mode) const {
        training::TrainData d;
        d.texts = &texts;
        d.train = corpus::build_samples(split.train, bm25_candidates(idx, split.train, 50), mode);
        d.valid = corpus::build_samples(split.valid, bm25_candidates(idx, split.valid, 50), mode);
        return d;
    }
};

double top1_share(const eval::Run& run, const std::vector<corpus::Question>& questions) {
    double hits = 0.0;
    for (const auto& q : questions) {
        auto it = run.find(q.id);
        if (it != run.end() && !it->second.empty() && q.is_relevant(it->second.front().id)) {
            hits += 1.0;
        }
    }
    return hits / static_cast<double>(questions.size());
}

} // namespace

BenchmarkResult run_keyword_benchmark(std::uint64_t seed, std::size_t epochs, double lr) {
    const auto start = std::chrono::steady_clock::now();
    KeywordSetup s(seed);
    auto data = s.data(corpus::SampleMode::pointwise);
    neural::EncoderConfig ec;
    ec.vocab_size = s.vocab.size();
    training::TrainConfig tc;
    tc.base_lr = lr;
    tc.epochs = epochs;
    tc.seed = seed;
    auto ckpt = training::train_cross_encoder(neural::make_encoder_params(ec, seed), ec, data, tc);
    rankers::CrossEncoderScorer scorer(ckpt.params, ec, s.vocab, tc.max_len);

    BenchmarkResult r;
    r.history = ckpt.history;
    r.bm25_mrr = eval::evaluate(rankers::retrieval_run(s.split.test, s.idx, 10), s.split.test).mrr;
    const auto run = rankers::pipeline_run(s.split.test, s.idx, s.bench.corpus, scorer, 50, 10);
    r.pipeline_mrr = eval::evaluate(run, s.split.test).mrr;
    r.pipeline_top1 = top1_share(run, s.split.test);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

std::vector<training::EpochRecord> keyword_loss_trend(std::uint64_t seed, training::Objective objective,
                                                      std::size_t epochs, double lr) {
    KeywordSetup s(seed);
    const auto mode = objective == training::Objective::pairwise ? corpus::SampleMode::pairwise
                                                                 : corpus::SampleMode::pointwise;
    auto data = s.data(mode);
    neural::EncoderConfig ec;
    ec.vocab_size = s.vocab.size();
    training::TrainConfig tc;
    tc.objective = objective;
    tc.base_lr = lr;
    tc.epochs = epochs;
    tc.seed = seed;
    return training::train_cross_encoder(neural::make_encoder_params(ec, seed), ec, data, tc).history;
}

TandaComparison run_tanda_comparison(std::uint64_t seed, const std::string& work_dir, bool verify_boundary) {
    synthetic::Config gc;
    gc.n_questions = 200;
    gc.n_answers = 1000;
    gc.domain = "g";
    gc.topic_domain = "c";
    gc.seed = seed;
    synthetic::Config tcfg;
    tcfg.n_questions = 30;
    tcfg.n_answers = 150;
    tcfg.domain = "t";
    tcfg.topic_domain = "c";
    tcfg.seed = seed + 100;
    const auto general = synthetic::generate(gc);
    const auto target = synthetic::generate(tcfg);
    const auto gs = corpus::split_questions(general.questions, 160, 40, 0, seed);
    const auto ts = corpus::split_questions(target.questions, 15, 5, 10, seed);
    const auto vocab = synthetic_vocab({&general, &target});
    const auto gi = index::InvertedIndex::build(general.corpus);
    const auto ti = index::InvertedIndex::build(target.corpus);
    const auto gt = training::TextTable::build(general.questions, general.corpus, vocab);
    const auto tt = training::TextTable::build(target.questions, target.corpus, vocab);

    training::TrainData gd{&gt, corpus::build_pointwise(gs.train, bm25_candidates(gi, gs.train, 20)),
                           corpus::SampleSet(corpus::build_pointwise(gs.valid, bm25_candidates(gi, gs.valid, 20)))};
    training::TrainData td{&tt, corpus::build_pointwise(ts.train, bm25_candidates(ti, ts.train, 50)),
                           corpus::SampleSet(corpus::build_pointwise(ts.valid, bm25_candidates(ti, ts.valid, 50)))};

    neural::EncoderConfig ec;
    ec.vocab_size = vocab.size();
    const auto init = neural::make_encoder_params(ec, seed, {false, false});
    training::TrainConfig transfer;
    transfer.base_lr = 1e-3;
    transfer.epochs = 3;
    transfer.seed = seed;
    training::TrainConfig adapt = transfer;
    adapt.epochs = 10;

    auto tanda = training::transfer_and_adapt(init, ec, gd, td, transfer, adapt, work_dir);
    auto only = training::train_cross_encoder(init, ec, td, adapt);

    TandaComparison out;
    if (verify_boundary) {
        // Stage 1 rerun in memory must match the tensors stage 2 started from.
        const auto stage1 = training::train_cross_encoder(init, ec, gd, transfer);
        const auto on_disk = training::load_checkpoint(tanda.transfer_path);
        out.stage_boundary_identical = training::params_hash(stage1.params) == training::params_hash(on_disk.params) &&
                                       training::params_hash(on_disk.params) == training::params_hash(tanda.transfer.params);
    }
    rankers::CrossEncoderScorer s_tanda(tanda.adapt.params, ec, vocab, adapt.max_len);
    rankers::CrossEncoderScorer s_only(only.params, ec, vocab, adapt.max_len);
    out.tanda_mrr = eval::evaluate(rankers::pipeline_run(ts.test, ti, target.corpus, s_tanda), ts.test).mrr;
    out.target_only_mrr = eval::evaluate(rankers::pipeline_run(ts.test, ti, target.corpus, s_only), ts.test).mrr;
    out.bm25_mrr = eval::evaluate(rankers::retrieval_run(ts.test, ti, 10), ts.test).mrr;
    return out;
}

void write_benchmark_tsv(const synthetic::Benchmark& b, const std::string& dir) {
    fs::create_directories(dir);
    corpus::write_questions(b.questions, (fs::path(dir) / "questions.tsv").string());
    corpus::write_answers(b.corpus, (fs::path(dir) / "answers.tsv").string());
    corpus::write_qrels(b.questions, (fs::path(dir) / "qrels.tsv").string());
}

} // namespace finrank::testing
