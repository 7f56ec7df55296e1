#include "finrank/checkpoint.hpp"

#include <cmath>

#include <json.hpp>

#include "finrank/binary_io.hpp"
#include "finrank/error.hpp"

namespace finrank::training {

using nlohmann::json;
using neural::Matrix;
using neural::ParameterStore;

namespace {

constexpr std::string_view kMagic = "FRCK";
constexpr std::string_view kMomentPrefix = "optim.m/";
constexpr std::string_view kVariancePrefix = "optim.v/";

[[noreturn]] void malformed(const std::string& what) {
    throw FormatError(FormatError::Kind::malformed, "checkpoint: " + what);
}

json encoder_to_json(const neural::EncoderConfig& c) {
    return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},         {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
            {"n_segments", c.n_segments}, {"dropout", c.dropout},   {"ln_eps", c.ln_eps}};
}

neural::EncoderConfig encoder_from_json(const json& j) {
    neural::EncoderConfig c;
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.n_segments = j.at("n_segments").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.ln_eps = j.at("ln_eps").get<double>();
    return c;
}

json lstm_to_json(const neural::QaLstmConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"embedding_dim", c.embedding_dim}, {"hidden", c.hidden},
            {"max_len", c.max_len},       {"dropout", c.dropout}};
}

neural::QaLstmConfig lstm_from_json(const json& j) {
    neural::QaLstmConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    return c;
}

json train_to_json(const TrainConfig& c) {
    json j = {{"objective", to_string(c.objective)},
              {"batch_size", c.batch_size},
              {"base_lr", c.base_lr},
              {"epochs", c.epochs},
              {"max_len", c.max_len},
              {"weight_decay", c.weight_decay},
              {"warmup_steps", c.warmup_steps},
              {"seed", c.seed},
              {"lambda_ce", c.pairwise.lambda_ce},
              {"lambda_hinge", c.pairwise.lambda_hinge},
              {"pairwise_margin", c.pairwise.margin},
              {"hinge_margin", c.hinge_margin},
              {"mask_rate", c.mask_rate}};
    j["dropout"] = c.dropout ? json(*c.dropout) : json(nullptr);
    return j;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    c.objective = parse_objective(j.at("objective").get<std::string>());
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.base_lr = j.at("base_lr").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_steps = j.at("warmup_steps").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.pairwise.lambda_ce = j.at("lambda_ce").get<double>();
    c.pairwise.lambda_hinge = j.at("lambda_hinge").get<double>();
    c.pairwise.margin = j.at("pairwise_margin").get<double>();
    c.hinge_margin = j.at("hinge_margin").get<double>();
    c.mask_rate = j.at("mask_rate").get<double>();
    if (!j.at("dropout").is_null()) {
        c.dropout = j.at("dropout").get<double>();
    }
    return c;
}

ModelKind parse_kind(const std::string& s) {
    for (auto k : {ModelKind::cross_encoder, ModelKind::encoder, ModelKind::qa_lstm}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    malformed("unknown model kind '" + s + "'");
}

void put_tensor(io::ByteWriter& w, const std::string& name, const Matrix& m) {
    w.put_string(name);
    w.put<std::uint32_t>(2);
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        w.put<float>(static_cast<float>(m.data()[i]));
    }
}

} // namespace

std::string to_string(Objective objective) {
    switch (objective) {
    case Objective::pointwise: return "pointwise";
    case Objective::pairwise: return "pairwise";
    case Objective::hinge: return "hinge";
    case Objective::mlm: return "mlm";
    }
    return "?";
}

Objective parse_objective(std::string_view name) {
    for (auto o : {Objective::pointwise, Objective::pairwise, Objective::hinge, Objective::mlm}) {
        if (to_string(o) == name) {
            return o;
        }
    }
    throw InvalidArgument("unknown objective '" + std::string(name) + "' (pointwise|pairwise|hinge|mlm)");
}

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::cross_encoder: return "cross_encoder";
    case ModelKind::encoder: return "encoder";
    case ModelKind::qa_lstm: return "qa_lstm";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw InvalidArgument("batch_size must be >= 1");
    }
    if (epochs < 1) {
        throw InvalidArgument("epochs must be >= 1");
    }
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) {
        throw InvalidArgument("base_lr must be a finite non-negative number");
    }
    if (max_len < 4) {
        throw InvalidArgument("max_len must be >= 4");
    }
    if (weight_decay < 0.0 || warmup_steps < 0) {
        throw InvalidArgument("weight_decay and warmup_steps must be non-negative");
    }
    if (dropout && !(*dropout >= 0.0 && *dropout < 1.0)) {
        throw InvalidArgument("dropout must lie in [0, 1)");
    }
    if (!(mask_rate > 0.0 && mask_rate <= 1.0)) {
        throw InvalidArgument("mask_rate must lie in (0, 1]");
    }
}

TrainConfig TrainConfig::qa_lstm_defaults() {
    TrainConfig c;
    c.objective = Objective::hinge;
    c.epochs = 3;
    c.batch_size = 64;
    c.base_lr = 1e-3;
    c.hinge_margin = 0.2;
    c.weight_decay = 0.0;
    c.warmup_steps = 0;
    return c;
}

TrainConfig TrainConfig::mlm_defaults() {
    TrainConfig c;
    c.objective = Objective::mlm;
    c.epochs = 1;
    c.batch_size = 8;
    return c;
}

const neural::EncoderConfig& Checkpoint::encoder_config() const {
    if (const auto* c = std::get_if<neural::EncoderConfig>(&model)) {
        return *c;
    }
    throw InvalidArgument("checkpoint holds a " + to_string(kind) + " model, not an encoder");
}

const neural::QaLstmConfig& Checkpoint::qa_lstm_config() const {
    if (const auto* c = std::get_if<neural::QaLstmConfig>(&model)) {
        return *c;
    }
    throw InvalidArgument("checkpoint holds a " + to_string(kind) + " model, not a QA-LSTM");
}

void round_to_float(ParameterStore& params) {
    for (auto& [name, m] : params) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = static_cast<float>(m.data()[i]);
        }
    }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    json header;
    header["kind"] = to_string(ckpt.kind);
    if (const auto* e = std::get_if<neural::EncoderConfig>(&ckpt.model)) {
        header["model"] = encoder_to_json(*e);
    } else {
        header["model"] = lstm_to_json(std::get<neural::QaLstmConfig>(ckpt.model));
    }
    header["train"] = ckpt.train ? train_to_json(*ckpt.train) : json(nullptr);
    header["vocab_hash"] = io::hex64(ckpt.vocab_hash);
    json history = json::array();
    for (const auto& r : ckpt.history) {
        history.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"valid_loss", r.valid_loss}});
    }
    header["history"] = history;
    header["best_epoch"] = ckpt.best_epoch;
    if (ckpt.optimizer) {
        const auto& o = *ckpt.optimizer;
        header["optimizer"] = {{"step", o.step}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
    } else {
        header["optimizer"] = nullptr;
    }

    io::ByteWriter w;
    w.put_bytes(kMagic);
    w.put<std::uint32_t>(kCheckpointFormatVersion);
    w.put_string(header.dump());
    std::uint64_t count = ckpt.params.size();
    if (ckpt.optimizer) {
        count += ckpt.optimizer->m.size() + ckpt.optimizer->v.size();
    }
    w.put<std::uint64_t>(count);
    for (const auto& [name, m] : ckpt.params) {
        put_tensor(w, name, m);
    }
    if (ckpt.optimizer) {
        for (const auto& [name, m] : ckpt.optimizer->m) {
            put_tensor(w, std::string(kMomentPrefix) + name, m);
        }
        for (const auto& [name, m] : ckpt.optimizer->v) {
            put_tensor(w, std::string(kVariancePrefix) + name, m);
        }
    }
    return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    io::ByteReader r(bytes, "checkpoint");
    if (bytes.size() < kMagic.size()) {
        throw FormatError(FormatError::Kind::truncated, "checkpoint: file shorter than its magic number");
    }
    if (r.get_bytes(kMagic.size()) != kMagic) {
        throw FormatError(FormatError::Kind::bad_magic, "checkpoint: bad magic (expected FRCK)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointFormatVersion) {
        throw FormatError(FormatError::Kind::unsupported_version,
                          "checkpoint: unsupported format version " + std::to_string(version));
    }
    const auto header_text = r.get_string();

    Checkpoint ckpt;
    std::uint64_t count = 0;
    try {
        const json header = json::parse(header_text);
        ckpt.kind = parse_kind(header.at("kind").get<std::string>());
        if (ckpt.kind == ModelKind::qa_lstm) {
            ckpt.model = lstm_from_json(header.at("model"));
        } else {
            ckpt.model = encoder_from_json(header.at("model"));
        }
        if (!header.at("train").is_null()) {
            ckpt.train = train_from_json(header.at("train"));
        }
        ckpt.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
        for (const auto& h : header.at("history")) {
            ckpt.history.push_back({h.at("epoch").get<std::size_t>(), h.at("train_loss").get<double>(),
                                    h.at("valid_loss").get<double>()});
        }
        ckpt.best_epoch = header.at("best_epoch").get<std::size_t>();
        if (!header.at("optimizer").is_null()) {
            const auto& o = header.at("optimizer");
            neural::AdamState state;
            state.step = o.at("step").get<std::int64_t>();
            state.beta1 = o.at("beta1").get<double>();
            state.beta2 = o.at("beta2").get<double>();
            state.eps = o.at("eps").get<double>();
            ckpt.optimizer = std::move(state);
        }
    } catch (const json::exception& e) {
        malformed(std::string("bad header: ") + e.what());
    } catch (const std::logic_error& e) {
        malformed(std::string("bad header value: ") + e.what());
    }

    count = r.get<std::uint64_t>();
    for (std::uint64_t t = 0; t < count; ++t) {
        auto name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        if (rank != 1 && rank != 2) {
            malformed("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        }
        std::uint64_t rows = 1;
        std::uint64_t cols = r.get<std::uint64_t>();
        if (rank == 2) {
            rows = cols;
            cols = r.get<std::uint64_t>();
        }
        if (cols != 0 && rows > r.remaining() / sizeof(float) / cols) {
            throw FormatError(FormatError::Kind::truncated, "checkpoint: tensor '" + name + "' runs past end of file");
        }
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = r.get<float>();
        }
        ParameterStore* target = &ckpt.params;
        if (name.starts_with(kMomentPrefix) || name.starts_with(kVariancePrefix)) {
            if (!ckpt.optimizer) {
                malformed("optimizer tensor '" + name + "' without optimizer header");
            }
            const bool moment = name.starts_with(kMomentPrefix);
            target = moment ? &ckpt.optimizer->m : &ckpt.optimizer->v;
            name = name.substr(moment ? kMomentPrefix.size() : kVariancePrefix.size());
        }
        if (target->contains(name)) {
            malformed("duplicate tensor '" + name + "'");
        }
        target->add(name, std::move(m));
    }
    if (!r.at_end()) {
        malformed(std::to_string(r.remaining()) + " trailing bytes");
    }
    if (ckpt.optimizer && (ckpt.optimizer->m.size() != ckpt.params.size() ||
                           ckpt.optimizer->v.size() != ckpt.params.size())) {
        malformed("optimizer moments do not cover every parameter");
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) { io::write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

void check_vocab(const Checkpoint& ckpt, std::uint64_t vocab_hash, bool allow_mismatch) {
    if (ckpt.vocab_hash != vocab_hash && !allow_mismatch) {
        throw DataError("vocabulary mismatch: checkpoint expects " + io::hex64(ckpt.vocab_hash) + ", got " +
                        io::hex64(vocab_hash));
    }
}

std::uint64_t params_hash(const ParameterStore& params) {
    std::uint64_t h = io::fnv1a("");
    for (const auto& [name, m] : params) {
        h = io::fnv1a(name, h);
        const std::int64_t shape[2] = {m.rows(), m.cols()};
        h = io::fnv1a(std::string_view(reinterpret_cast<const char*>(shape), sizeof(shape)), h);
        h = io::fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()),
                                       static_cast<std::size_t>(m.size()) * sizeof(double)),
                      h);
    }
    return h;
}

} // namespace finrank::training
