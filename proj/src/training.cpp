#include "finrank/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "finrank/error.hpp"
#include "finrank/rng.hpp"

namespace finrank::training {

using neural::Matrix;
using neural::ParameterStore;
using neural::Tape;
using neural::Var;
using textenc::TokenId;

// ---------------------------------------------------------------- text table

TextTable TextTable::build(const std::vector<corpus::Question>& questions, const corpus::AnswerCorpus& corpus,
                           const textenc::Vocabulary& vocab) {
    TextTable t;
    t.vocab_hash = vocab.hash();
    for (const auto& q : questions) {
        const auto tokens = textenc::tokenize(q.text);
        t.questions[q.id] = textenc::to_ids(tokens, vocab);
    }
    for (const auto& [id, a] : corpus) {
        const auto tokens = textenc::tokenize(a.text);
        t.answers[id] = textenc::to_ids(tokens, vocab);
    }
    return t;
}

const std::vector<TokenId>& TextTable::question(const std::string& id) const {
    auto it = questions.find(id);
    if (it == questions.end()) {
        throw DataError("no text for question '" + id + "'");
    }
    return it->second;
}

const std::vector<TokenId>& TextTable::answer(const std::string& id) const {
    auto it = answers.find(id);
    if (it == answers.end()) {
        throw DataError("no text for answer '" + id + "'");
    }
    return it->second;
}

namespace {

// ---------------------------------------------------------------- generic loop

/// Loss of one training sample on a shared tape; rng is null in eval mode.
using SampleLoss = std::function<Var(Tape&, const ParameterStore&, std::size_t, Rng*)>;

struct Problem {
    std::size_t n_train = 0;
    SampleLoss train_loss;
    std::size_t n_valid = 0;
    SampleLoss valid_loss;
};

double mean_eval_loss(const ParameterStore& params, std::size_t n, const SampleLoss& loss) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Tape tape;
        total += loss(tape, params, i, nullptr).scalar();
    }
    return total / static_cast<double>(n);
}

struct FitResult {
    ParameterStore best_params;
    neural::AdamState best_optimizer;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

FitResult fit(ParameterStore params, const Problem& problem, const TrainConfig& config, const EpochCallback& on_epoch) {
    if (problem.n_train == 0) {
        throw DataError("training set is empty");
    }
    const std::size_t batch = config.batch_size;
    const std::size_t n_batches = (problem.n_train + batch - 1) / batch;
    const auto total_steps = static_cast<std::int64_t>(n_batches * config.epochs);
    const neural::LrSchedule schedule{config.base_lr, neural::effective_warmup(config.warmup_steps, total_steps)};

    auto adam = neural::AdamState::for_params(params);
    Rng order_rng(derive_seed(config.seed, 1));
    Rng dropout_rng(derive_seed(config.seed, 2));
    std::vector<std::size_t> order(problem.n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    FitResult out;
    double best_loss = 0.0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t lo = b * batch;
            const std::size_t hi = std::min(lo + batch, problem.n_train);
            ParameterStore grads;
            double batch_loss = 0.0;
            try {
                Tape tape;
                Var total;
                for (std::size_t i = lo; i < hi; ++i) {
                    Var l = problem.train_loss(tape, params, order[i], &dropout_rng);
                    total = i == lo ? l : neural::add(total, l);
                }
                Var loss = neural::scale(total, 1.0 / static_cast<double>(hi - lo));
                tape.backward(loss);
                grads = params.zeros_like();
                tape.add_gradients_to(grads);
                batch_loss = loss.scalar();
            } catch (const NumericalError& e) {
                throw NumericalError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) + ": " +
                                     e.what());
            }
            loss_sum += batch_loss * static_cast<double>(hi - lo);
            neural::adam_step(params, grads, adam, schedule, config.weight_decay);
        }
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(problem.n_train);
        record.valid_loss = problem.n_valid > 0 ? mean_eval_loss(params, problem.n_valid, problem.valid_loss)
                                                : record.train_loss;
        if (!std::isfinite(record.valid_loss)) {
            throw NumericalError("epoch " + std::to_string(epoch) + ": validation loss is not finite");
        }
        out.history.push_back(record);
        if (out.best_epoch == 0 || record.valid_loss < best_loss) {
            best_loss = record.valid_loss;
            out.best_epoch = epoch;
            out.best_params = params;
            out.best_optimizer = adam;
        }
        if (on_epoch) {
            on_epoch(record);
        }
    }
    round_to_float(out.best_params);
    round_to_float(out.best_optimizer.m);
    round_to_float(out.best_optimizer.v);
    return out;
}

// ---------------------------------------------------------------- cross-encoder

struct PairwiseInputs {
    textenc::PairEncoding positive;
    textenc::PairEncoding negative;
};

struct EncodedSamples {
    std::vector<textenc::PairEncoding> pointwise;
    std::vector<int> labels;
    std::vector<PairwiseInputs> pairwise;

    std::size_t size() const { return pointwise.size() + pairwise.size(); }
};

EncodedSamples encode_samples(const corpus::SampleSet& samples, const TextTable& texts, std::size_t max_len) {
    EncodedSamples out;
    if (const auto* points = std::get_if<std::vector<corpus::LabeledSample>>(&samples)) {
        for (const auto& s : *points) {
            out.pointwise.push_back(
                textenc::encode_pair_ids(texts.question(s.question_id), texts.answer(s.answer_id), max_len));
            out.labels.push_back(s.label);
        }
    } else {
        for (const auto& s : std::get<std::vector<corpus::TripleSample>>(samples)) {
            const auto& q = texts.question(s.question_id);
            out.pairwise.push_back({textenc::encode_pair_ids(q, texts.answer(s.positive_id), max_len),
                                    textenc::encode_pair_ids(q, texts.answer(s.negative_id), max_len)});
        }
    }
    return out;
}

SampleLoss cross_encoder_loss(std::shared_ptr<const EncodedSamples> samples, const neural::EncoderConfig& model,
                              const TrainConfig& config) {
    if (!samples->pointwise.empty()) {
        return [samples, model](Tape& tape, const ParameterStore& params, std::size_t i, Rng* rng) {
            Var prob = neural::relevance_probability(tape, params, model, samples->pointwise[i], rng);
            const int label = samples->labels[i];
            return neural::pointwise_loss(prob, std::span<const int>(&label, 1));
        };
    }
    const auto weights = config.pairwise;
    return [samples, model, weights](Tape& tape, const ParameterStore& params, std::size_t i, Rng* rng) {
        const auto& s = samples->pairwise[i];
        Var y_pos = neural::relevance_probability(tape, params, model, s.positive, rng);
        Var y_neg = neural::relevance_probability(tape, params, model, s.negative, rng);
        return neural::pairwise_loss(y_pos, y_neg, weights);
    };
}

void check_objective(const corpus::SampleSet& samples, const TrainConfig& config) {
    const bool pointwise = std::holds_alternative<std::vector<corpus::LabeledSample>>(samples);
    if (config.objective == Objective::pointwise && !pointwise) {
        throw InvalidArgument("pointwise objective needs labeled (question, answer, label) samples");
    }
    if ((config.objective == Objective::pairwise || config.objective == Objective::hinge) && pointwise) {
        throw InvalidArgument(to_string(config.objective) + " objective needs (question, positive, negative) triples");
    }
}

void check_vocab_rows(const ParameterStore& params, const std::string& name, std::size_t vocab_size) {
    if (!params.contains(name)) {
        throw InvalidArgument("parameters lack '" + name + "'");
    }
    if (static_cast<std::size_t>(params.at(name).rows()) != vocab_size) {
        throw InvalidArgument("'" + name + "' has " + std::to_string(params.at(name).rows()) +
                              " rows but the model vocabulary has " + std::to_string(vocab_size));
    }
}

void erase_prefix(ParameterStore& params, std::string_view prefix) {
    std::vector<std::string> doomed;
    for (const auto& [name, m] : params) {
        if (name.starts_with(prefix)) {
            doomed.push_back(name);
        }
    }
    for (const auto& n : doomed) {
        params.erase(n);
    }
}

neural::EncoderConfig with_dropout(neural::EncoderConfig model, const TrainConfig& config) {
    if (config.dropout) {
        model.dropout = *config.dropout;
    }
    return model;
}

std::size_t sample_count(const corpus::SampleSet& s) {
    return std::visit([](const auto& v) { return v.size(); }, s);
}

// ---------------------------------------------------------------- QA-LSTM

textenc::SeqEncoding seq_of(const std::vector<TokenId>& ids, std::size_t max_len) {
    textenc::SeqEncoding e;
    const auto n = std::min(ids.size(), max_len);
    e.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    e.mask.assign(n, 1);
    return e;
}

struct EncodedTriples {
    std::vector<textenc::SeqEncoding> question, positive, negative;
};

} // namespace

Checkpoint train_cross_encoder(ParameterStore params, const neural::EncoderConfig& model_in, const TrainData& data,
                               const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (config.objective != Objective::pointwise && config.objective != Objective::pairwise) {
        throw InvalidArgument("cross-encoder fine-tuning supports pointwise and pairwise objectives");
    }
    if (data.texts == nullptr) {
        throw InvalidArgument("training data lacks a text table");
    }
    const auto model = with_dropout(model_in, config);
    model.validate();
    if (config.max_len > model.max_len) {
        throw InvalidArgument("max_len " + std::to_string(config.max_len) + " exceeds the encoder's " +
                              std::to_string(model.max_len) + " positions");
    }
    check_vocab_rows(params, "enc.tok_emb", model.vocab_size);
    check_objective(data.train, config);
    if (data.valid) {
        check_objective(*data.valid, config);
    }
    erase_prefix(params, "mlm.");
    neural::add_encoder_heads(params, model, {true, false}, derive_seed(config.seed, 5));

    auto train = std::make_shared<const EncodedSamples>(encode_samples(data.train, *data.texts, config.max_len));
    Problem problem;
    problem.n_train = train->size();
    problem.train_loss = cross_encoder_loss(train, model, config);
    if (data.valid && sample_count(*data.valid) > 0) {
        auto valid = std::make_shared<const EncodedSamples>(encode_samples(*data.valid, *data.texts, config.max_len));
        problem.n_valid = valid->size();
        problem.valid_loss = cross_encoder_loss(valid, model, config);
    }
    auto result = fit(std::move(params), problem, config, on_epoch);

    Checkpoint ckpt;
    ckpt.kind = ModelKind::cross_encoder;
    ckpt.model = model_in;
    ckpt.train = config;
    ckpt.vocab_hash = data.texts->vocab_hash;
    ckpt.params = std::move(result.best_params);
    ckpt.optimizer = std::move(result.best_optimizer);
    ckpt.history = std::move(result.history);
    ckpt.best_epoch = result.best_epoch;
    return ckpt;
}

double evaluate_cross_encoder_loss(const ParameterStore& params, const neural::EncoderConfig& model,
                                   const TextTable& texts, const corpus::SampleSet& samples,
                                   const TrainConfig& config) {
    auto encoded = std::make_shared<const EncodedSamples>(encode_samples(samples, texts, config.max_len));
    if (encoded->size() == 0) {
        throw DataError("no samples to evaluate");
    }
    return mean_eval_loss(params, encoded->size(), cross_encoder_loss(encoded, model, config));
}

Checkpoint train_qalstm(ParameterStore params, const neural::QaLstmConfig& model_in, const TrainData& data,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (config.objective != Objective::hinge) {
        throw InvalidArgument("the QA-LSTM trains with the hinge objective");
    }
    if (data.texts == nullptr) {
        throw InvalidArgument("training data lacks a text table");
    }
    auto model = model_in;
    if (config.dropout) {
        model.dropout = *config.dropout;
    }
    model.validate();
    check_vocab_rows(params, "lstm.emb", model.vocab_size);
    check_objective(data.train, config);
    if (data.valid) {
        check_objective(*data.valid, config);
    }
    const auto max_len = std::min(config.max_len, model.max_len);
    const auto encode = [&](const corpus::SampleSet& set) {
        auto out = std::make_shared<EncodedTriples>();
        for (const auto& s : std::get<std::vector<corpus::TripleSample>>(set)) {
            out->question.push_back(seq_of(data.texts->question(s.question_id), max_len));
            out->positive.push_back(seq_of(data.texts->answer(s.positive_id), max_len));
            out->negative.push_back(seq_of(data.texts->answer(s.negative_id), max_len));
        }
        return std::shared_ptr<const EncodedTriples>(std::move(out));
    };
    const double margin = config.hinge_margin;
    const auto make_loss = [&](std::shared_ptr<const EncodedTriples> t) -> SampleLoss {
        return [t, model, margin](Tape& tape, const ParameterStore& p, std::size_t i, Rng* rng) {
            // One set of weights encodes question and both answers.
            Var vq = neural::bilstm_forward(tape, p, model, t->question[i], rng);
            Var vp = neural::bilstm_forward(tape, p, model, t->positive[i], rng);
            Var vn = neural::bilstm_forward(tape, p, model, t->negative[i], rng);
            return neural::hinge_loss(neural::cosine(vq, vp), neural::cosine(vq, vn), margin);
        };
    };
    auto train = encode(data.train);
    Problem problem;
    problem.n_train = train->question.size();
    problem.train_loss = make_loss(train);
    if (data.valid && sample_count(*data.valid) > 0) {
        auto valid = encode(*data.valid);
        problem.n_valid = valid->question.size();
        problem.valid_loss = make_loss(valid);
    }
    auto result = fit(std::move(params), problem, config, on_epoch);

    Checkpoint ckpt;
    ckpt.kind = ModelKind::qa_lstm;
    ckpt.model = model_in;
    ckpt.train = config;
    ckpt.vocab_hash = data.texts->vocab_hash;
    ckpt.params = std::move(result.best_params);
    ckpt.optimizer = std::move(result.best_optimizer);
    ckpt.history = std::move(result.history);
    ckpt.best_epoch = result.best_epoch;
    return ckpt;
}

Checkpoint pretrain_mlm(ParameterStore params, const neural::EncoderConfig& model_in,
                        const corpus::AnswerCorpus& corpus, const textenc::Vocabulary& vocab,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (config.objective != Objective::mlm) {
        throw InvalidArgument("pretrain_mlm needs the mlm objective");
    }
    if (corpus.empty()) {
        throw DataError("cannot pre-train on an empty corpus");
    }
    const auto model = with_dropout(model_in, config);
    model.validate();
    if (config.max_len > model.max_len) {
        throw InvalidArgument("max_len exceeds the encoder's positions");
    }
    if (vocab.size() != model.vocab_size) {
        throw InvalidArgument("vocabulary size differs from the encoder's vocab_size");
    }
    check_vocab_rows(params, "enc.tok_emb", model.vocab_size);
    erase_prefix(params, "head.");
    neural::add_encoder_heads(params, model, {false, true}, derive_seed(config.seed, 4));

    auto sequences = std::make_shared<std::vector<textenc::PairEncoding>>();
    for (const auto& [id, answer] : corpus) {
        const auto ids = textenc::to_ids(textenc::tokenize(answer.text), vocab);
        sequences->push_back(textenc::encode_single_segment(ids, config.max_len));
    }
    auto mask_rng = std::make_shared<Rng>(derive_seed(config.seed, 3));
    const double rate = config.mask_rate;
    const auto vocab_size = model.vocab_size;

    Problem problem;
    problem.n_train = sequences->size();
    problem.train_loss = [sequences, mask_rng, rate, vocab_size, model](Tape& tape, const ParameterStore& p,
                                                                        std::size_t i, Rng* rng) {
        auto masked = neural::mask_tokens((*sequences)[i], vocab_size, *mask_rng, rate);
        if (masked.targets.empty()) {
            throw DataError("answer has no maskable token");
        }
        auto enc = neural::encoder_forward(tape, p, model, masked.input, rng);
        std::vector<std::size_t> rows;
        std::vector<neural::MaskedTarget> targets;
        for (std::size_t k = 0; k < masked.targets.size(); ++k) {
            rows.push_back(masked.targets[k].position);
            targets.push_back({k, masked.targets[k].target});
        }
        return neural::mlm_loss(neural::mlm_logits(tape, p, enc.states, rows), targets);
    };
    auto result = fit(std::move(params), problem, config, on_epoch);
    erase_prefix(result.best_params, "mlm.");
    erase_prefix(result.best_optimizer.m, "mlm.");
    erase_prefix(result.best_optimizer.v, "mlm.");

    Checkpoint ckpt;
    ckpt.kind = ModelKind::encoder;
    ckpt.model = model_in;
    ckpt.train = config;
    ckpt.vocab_hash = vocab.hash();
    ckpt.params = std::move(result.best_params);
    ckpt.optimizer = std::move(result.best_optimizer);
    ckpt.history = std::move(result.history);
    ckpt.best_epoch = result.best_epoch;
    return ckpt;
}

TandaResult transfer_and_adapt(ParameterStore encoder_params, const neural::EncoderConfig& model,
                               const TrainData& general, const TrainData& target, const TrainConfig& transfer_config,
                               const TrainConfig& adapt_config, const std::string& out_dir,
                               const EpochCallback& on_epoch) {
    if (general.texts == nullptr || target.texts == nullptr) {
        throw InvalidArgument("both stages need a text table");
    }
    if (general.texts->vocab_hash != target.texts->vocab_hash) {
        throw DataError("general and target data were encoded with different vocabularies");
    }
    std::filesystem::create_directories(out_dir);
    TandaResult out;
    out.transfer_path = (std::filesystem::path(out_dir) / "transfer.frck").string();
    out.adapt_path = (std::filesystem::path(out_dir) / "adapt.frck").string();

    auto stage1 = train_cross_encoder(std::move(encoder_params), model, general, transfer_config, on_epoch);
    save_checkpoint(stage1, out.transfer_path);
    out.transfer = load_checkpoint(out.transfer_path);
    check_vocab(out.transfer, target.texts->vocab_hash);

    out.adapt = train_cross_encoder(out.transfer.params, out.transfer.encoder_config(), target, adapt_config,
                                    on_epoch);
    save_checkpoint(out.adapt, out.adapt_path);
    return out;
}

} // namespace finrank::training
