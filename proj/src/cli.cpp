#include "finrank/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "finrank/binary_io.hpp"
#include "finrank/checkpoint.hpp"
#include "finrank/corpus.hpp"
#include "finrank/error.hpp"
#include "finrank/evaluation.hpp"
#include "finrank/index.hpp"
#include "finrank/rankers.hpp"
#include "finrank/textenc.hpp"
#include "finrank/training.hpp"

namespace finrank::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Standard FiQA train/valid/test question split; used when the question count matches.
constexpr std::size_t kFiqaSplit[3] = {5683, 632, 333};

class UsageError : public Error {
public:
    using Error::Error;
};

/// Flags shared by every subcommand.
struct Common {
    std::uint64_t seed = 42;
    std::string config;
    double k1 = 0.82;
    double b = 0.68;
    std::size_t pool_size = 50;
    std::size_t top_k = 10;
    std::size_t max_len = 128;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::size_t> epochs;
    std::string manifest;

    index::Bm25Params bm25() const {
        index::Bm25Params p{k1, b};
        p.validate();
        return p;
    }
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    cmd->add_option("--config", c.config, "Config file of key = value lines");
    cmd->add_option("--k1", c.k1, "BM25 k1")->capture_default_str();
    cmd->add_option("--b", c.b, "BM25 b")->capture_default_str();
    cmd->add_option("--pool-size", c.pool_size, "Candidates retrieved per question")->capture_default_str();
    cmd->add_option("--top-k", c.top_k, "Answers kept after re-ranking")->capture_default_str();
    cmd->add_option("--max-len", c.max_len, "Maximum encoded sequence length")->capture_default_str();
    cmd->add_option("--batch-size", c.batch_size, "Training batch size");
    cmd->add_option("--lr", c.lr, "Base learning rate");
    cmd->add_option("--epochs", c.epochs, "Training epochs");
    cmd->add_option("--manifest", c.manifest, "Manifest path (default: beside the output)");
}

/// Model shape flags for commands that create models.
struct ModelFlags {
    std::size_t layers = 2;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t embedding_dim = 100;
    std::size_t hidden = 256;
    std::optional<double> dropout;
    double weight_decay = 0.01;
    std::int64_t warmup = 10000;
    std::string init;
    std::string embeddings;
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
    cmd->add_option("--layers", m.layers, "Encoder layers")->capture_default_str();
    cmd->add_option("--d-model", m.d_model, "Encoder width")->capture_default_str();
    cmd->add_option("--heads", m.heads, "Attention heads")->capture_default_str();
    cmd->add_option("--d-ff", m.d_ff, "Feed-forward width")->capture_default_str();
    cmd->add_option("--embedding-dim", m.embedding_dim, "QA-LSTM embedding size")->capture_default_str();
    cmd->add_option("--hidden", m.hidden, "QA-LSTM hidden size")->capture_default_str();
    cmd->add_option("--dropout", m.dropout, "Dropout rate override");
    cmd->add_option("--weight-decay", m.weight_decay, "Decoupled weight decay")->capture_default_str();
    cmd->add_option("--warmup", m.warmup, "Warmup steps (capped at 10% of the run)")->capture_default_str();
    cmd->add_option("--init", m.init, "Checkpoint to start from");
    cmd->add_option("--embeddings", m.embeddings, "Word vectors for the QA-LSTM embedding table");
}

/// Collects what the manifest records about one invocation.
class Context {
public:
    Context(std::string command, CLI::App* app, const Common& common, std::ostream& out, std::ostream& err)
        : command_(std::move(command)), app_(app), common_(common), out(out), err(err),
          start_(std::chrono::steady_clock::now()) {}

    std::string input(const std::string& path) {
        std::string resolved = path;
        if (const char* root = std::getenv("FINRANK_DATA_DIR"); root != nullptr && *root != '\0') {
            if (fs::path(path).is_relative()) {
                resolved = (fs::path(root) / path).string();
            }
        }
        if (fs::is_regular_file(resolved)) {
            inputs_[resolved] = io::hex64(io::fnv1a(io::read_file(resolved)));
        }
        return resolved;
    }

    void output(const std::string& path) { outputs_.push_back(path); }

    void write_manifest(const std::string& beside) {
        std::string path = common_.manifest;
        if (path.empty()) {
            path = beside.empty() ? "finrank-" + command_ + ".manifest.json"
                                  : (fs::is_directory(beside) ? (fs::path(beside) / "manifest.json").string()
                                                              : beside + ".manifest.json");
        }
        json config = json::object();
        for (const auto* opt : app_->get_options()) {
            if (opt->get_name() == "--help" || opt->get_name().empty()) {
                continue;
            }
            const auto& results = opt->results();
            std::string value;
            if (!results.empty()) {
                value = results.back();
            } else if (!opt->get_default_str().empty()) {
                value = opt->get_default_str();
            } else {
                continue;
            }
            std::string key = opt->get_name().substr(2);
            std::replace(key.begin(), key.end(), '-', '_');
            auto parsed = json::parse(value, nullptr, false);
            config[key] = parsed.is_number() ? parsed : json(value);
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json m = {{"command", command_},
                  {"config", config},
                  {"seed", common_.seed},
                  {"inputs", inputs_},
                  {"outputs", outputs_},
                  {"timing", {{"seconds", seconds}}}};
        io::write_file(path, m.dump(2) + "\n");
    }

private:
    std::string command_;
    CLI::App* app_;
    const Common& common_;

public:
    std::ostream& out;
    std::ostream& err;

private:
    std::chrono::steady_clock::time_point start_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------- dataset dirs

struct DataDir {
    corpus::Dataset dataset;
    textenc::Vocabulary vocab;
    std::map<std::string, std::string> split_of;
};

std::map<std::string, std::string> read_splits(const std::string& path) {
    std::map<std::string, std::string> out;
    std::ifstream in(path);
    if (!in) {
        return out;
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected qid<TAB>split");
        }
        out[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return out;
}

DataDir load_data(Context& ctx, const std::string& dir_arg, const std::string& vocab_override = {}) {
    const auto dir = fs::path(ctx.input(dir_arg));
    if (!fs::is_directory(dir)) {
        throw DataError("data directory " + dir.string() + " does not exist (run `finrank ingest` first)");
    }
    DataDir d;
    d.dataset = corpus::ingest(ctx.input((dir / "questions.tsv").string()), ctx.input((dir / "answers.tsv").string()),
                               ctx.input((dir / "qrels.tsv").string()));
    d.vocab = textenc::Vocabulary::load(vocab_override.empty() ? ctx.input((dir / "vocab.tsv").string())
                                                               : ctx.input(vocab_override));
    d.split_of = read_splits(ctx.input((dir / "splits.tsv").string()));
    return d;
}

std::vector<corpus::Question> select_split(const DataDir& d, const std::string& split) {
    if (split == "all") {
        return d.dataset.questions;
    }
    if (split != "train" && split != "valid" && split != "test") {
        throw UsageError("--split must be train, valid, test or all");
    }
    std::vector<corpus::Question> out;
    for (const auto& q : d.dataset.questions) {
        auto it = d.split_of.find(q.id);
        if (it != d.split_of.end() && it->second == split) {
            out.push_back(q);
        }
    }
    return out;
}

/// Run entries for the given questions; a question the run omits (nothing
/// retrieved) gets an empty pool.
CandidateLists to_candidates(const eval::Run& run, const std::vector<corpus::Question>& questions) {
    CandidateLists out;
    for (const auto& q : questions) {
        auto it = run.find(q.id);
        out[q.id] = it == run.end() ? RankedList{} : it->second;
    }
    return out;
}

training::TrainConfig train_config(const Common& c, const ModelFlags& m, training::Objective objective) {
    training::TrainConfig t = objective == training::Objective::hinge ? training::TrainConfig::qa_lstm_defaults()
                              : objective == training::Objective::mlm ? training::TrainConfig::mlm_defaults()
                                                                      : training::TrainConfig{};
    t.objective = objective;
    t.seed = c.seed;
    t.max_len = c.max_len;
    if (c.batch_size) {
        t.batch_size = *c.batch_size;
    }
    if (c.lr) {
        t.base_lr = *c.lr;
    }
    if (c.epochs) {
        t.epochs = *c.epochs;
    }
    t.dropout = m.dropout;
    if (objective != training::Objective::hinge) {
        t.weight_decay = m.weight_decay;
        t.warmup_steps = m.warmup;
    }
    return t;
}

neural::EncoderConfig encoder_config(const ModelFlags& m, const Common& c, std::size_t vocab_size) {
    neural::EncoderConfig e;
    e.n_layers = m.layers;
    e.d_model = m.d_model;
    e.n_heads = m.heads;
    e.d_ff = m.d_ff;
    e.max_len = c.max_len;
    e.vocab_size = vocab_size;
    e.validate();
    return e;
}

/// Encoder parameters and config: fresh, or from an encoder / cross-encoder checkpoint.
std::pair<neural::ParameterStore, neural::EncoderConfig> initial_encoder(Context& ctx, const ModelFlags& m,
                                                                           const Common& c,
                                                                           const textenc::Vocabulary& vocab) {
    if (m.init.empty()) {
        auto cfg = encoder_config(m, c, vocab.size());
        return {neural::make_encoder_params(cfg, c.seed, {false, false}), cfg};
    }
    auto ckpt = training::load_checkpoint(ctx.input(m.init));
    training::check_vocab(ckpt, vocab.hash());
    return {std::move(ckpt.params), ckpt.encoder_config()};
}

void print_epoch(std::ostream& out, const training::EpochRecord& r) {
    out << "epoch " << r.epoch << "  train_loss " << std::fixed << std::setprecision(6) << r.train_loss
        << "  valid_loss " << r.valid_loss << '\n';
    out.unsetf(std::ios::fixed);
}

std::unique_ptr<rankers::Scorer> make_scorer(Context& ctx, const std::string& model, const DataDir& data,
                                             const index::InvertedIndex* idx, const Common& c) {
    if (model.empty() || model == "bm25") {
        if (idx == nullptr) {
            throw UsageError("the bm25 scorer needs --index");
        }
        return std::make_unique<rankers::Bm25Scorer>(*idx, c.bm25());
    }
    auto ckpt = training::load_checkpoint(ctx.input(model));
    return rankers::scorer_from_checkpoint(ckpt, data.vocab, c.max_len);
}

std::vector<std::size_t> parse_counts(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoul(part, &used));
            if (used != part.size()) {
                throw std::invalid_argument(part);
            }
        } catch (const std::logic_error&) {
            throw UsageError("--split-counts expects three comma-separated integers");
        }
    }
    if (out.size() != 3) {
        throw UsageError("--split-counts expects three comma-separated integers");
    }
    return out;
}

std::string format_score(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(6) << v;
    return s.str();
}

// ---------------------------------------------------------------- config files

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace

std::vector<std::string> config_tokens(const std::string& text, const std::string& origin) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        std::replace(key.begin(), key.end(), '_', '-');
        if (key == "config") {
            throw UsageError(origin + ":" + std::to_string(lineno) + ": config files cannot nest");
        }
        tokens.push_back("--" + key);
        if (!value.empty()) {
            tokens.push_back(value);
        }
    }
    return tokens;
}

int dispatch(const std::vector<std::string>& raw_args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"finrank: BM25 retrieval, neural answer re-ranking and evaluation"};
    app.name("finrank");
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    Common common;
    ModelFlags model_flags;
    std::function<void(Context&)> action;
    std::string output_for_manifest;

    // ingest
    std::string questions_file, answers_file, qrels_file, out_path, split_counts, vocab_file;
    std::size_t min_count = 1;
    auto* ingest_cmd = app.add_subcommand("ingest", "Clean questions/answers/qrels into a data directory");
    add_common(ingest_cmd, common);
    ingest_cmd->add_option("--questions", questions_file, "questions (qid<TAB>text)")->required();
    ingest_cmd->add_option("--answers", answers_file, "answers (aid<TAB>text)")->required();
    ingest_cmd->add_option("--qrels", qrels_file, "relevance pairs (qid<TAB>aid)")->required();
    ingest_cmd->add_option("--out", out_path, "output directory")->required();
    ingest_cmd->add_option("--split-counts", split_counts, "train,valid,test question counts");
    ingest_cmd->add_option("--vocab", vocab_file, "reuse this vocabulary instead of building one");
    ingest_cmd->add_option("--min-count", min_count, "minimum token count for the vocabulary")->capture_default_str();

    // shared by most commands
    std::string data_dir, index_file, model_file, candidates_file, split = "test", tag = "finrank";

    auto* index_cmd = app.add_subcommand("index", "Build the BM25 inverted index of a data directory");
    add_common(index_cmd, common);
    index_cmd->add_option("--data", data_dir, "data directory")->required();
    index_cmd->add_option("--out", out_path, "index file")->required();

    auto* retrieve_cmd = app.add_subcommand("retrieve", "BM25 candidate retrieval (pool-size per question)");
    add_common(retrieve_cmd, common);
    retrieve_cmd->add_option("--data", data_dir, "data directory")->required();
    retrieve_cmd->add_option("--index", index_file, "index file")->required();
    retrieve_cmd->add_option("--split", split, "train|valid|test|all")->capture_default_str();
    retrieve_cmd->add_option("--out", out_path, "run file")->required();
    retrieve_cmd->add_option("--tag", tag, "run tag")->capture_default_str();

    std::string mode = "pointwise";
    std::optional<std::size_t> cap;
    auto* samples_cmd = app.add_subcommand("build-samples", "Training samples from a candidate run");
    add_common(samples_cmd, common);
    samples_cmd->add_option("--data", data_dir, "data directory")->required();
    samples_cmd->add_option("--candidates", candidates_file, "candidate run file")->required();
    samples_cmd->add_option("--split", split, "train|valid|test|all")->capture_default_str();
    samples_cmd->add_option("--mode", mode, "pointwise|pairwise")->capture_default_str();
    samples_cmd->add_option("--cap", cap, "maximum pairwise triples per question");
    samples_cmd->add_option("--out", out_path, "samples file")->required();

    std::string objective_name = "pointwise", train_samples, valid_samples;
    auto* train_cmd = app.add_subcommand("train", "Train a re-ranker (cross-encoder or QA-LSTM)");
    add_common(train_cmd, common);
    add_model_flags(train_cmd, model_flags);
    train_cmd->add_option("--data", data_dir, "data directory")->required();
    train_cmd->add_option("--objective", objective_name, "pointwise|pairwise|hinge")->capture_default_str();
    train_cmd->add_option("--train-samples", train_samples, "training samples file")->required();
    train_cmd->add_option("--valid-samples", valid_samples, "validation samples file");
    train_cmd->add_option("--out", out_path, "checkpoint file")->required();

    auto* mlm_cmd = app.add_subcommand("pretrain-mlm", "Masked-LM further pre-training on the answers");
    add_common(mlm_cmd, common);
    add_model_flags(mlm_cmd, model_flags);
    mlm_cmd->add_option("--data", data_dir, "data directory")->required();
    mlm_cmd->add_option("--out", out_path, "encoder checkpoint")->required();

    std::string general_dir, target_dir, general_samples, target_samples, general_valid, target_valid;
    std::optional<double> adapt_lr;
    std::optional<std::size_t> adapt_epochs;
    auto* tanda_cmd = app.add_subcommand("tanda", "Transfer on general data, then adapt on target data");
    add_common(tanda_cmd, common);
    add_model_flags(tanda_cmd, model_flags);
    tanda_cmd->add_option("--general", general_dir, "general data directory")->required();
    tanda_cmd->add_option("--target", target_dir, "target data directory")->required();
    tanda_cmd->add_option("--general-samples", general_samples, "general training samples")->required();
    tanda_cmd->add_option("--target-samples", target_samples, "target training samples")->required();
    tanda_cmd->add_option("--general-valid", general_valid, "general validation samples");
    tanda_cmd->add_option("--target-valid", target_valid, "target validation samples");
    tanda_cmd->add_option("--objective", objective_name, "pointwise|pairwise")->capture_default_str();
    tanda_cmd->add_option("--vocab", vocab_file, "vocabulary shared by both stages");
    tanda_cmd->add_option("--adapt-lr", adapt_lr, "learning rate of the adapt stage");
    tanda_cmd->add_option("--adapt-epochs", adapt_epochs, "epochs of the adapt stage");
    tanda_cmd->add_option("--out", out_path, "output directory")->required();

    auto* rerank_cmd = app.add_subcommand("rerank", "Re-rank a candidate run with a trained model");
    add_common(rerank_cmd, common);
    rerank_cmd->add_option("--data", data_dir, "data directory")->required();
    rerank_cmd->add_option("--model", model_file, "checkpoint")->required();
    rerank_cmd->add_option("--candidates", candidates_file, "candidate run file")->required();
    rerank_cmd->add_option("--split", split, "train|valid|test|all")->capture_default_str();
    rerank_cmd->add_option("--out", out_path, "run file")->required();
    rerank_cmd->add_option("--tag", tag, "run tag")->capture_default_str();

    auto* pipeline_cmd = app.add_subcommand("pipeline", "Retrieve pool-size candidates, re-rank, keep top-k");
    add_common(pipeline_cmd, common);
    pipeline_cmd->add_option("--data", data_dir, "data directory")->required();
    pipeline_cmd->add_option("--index", index_file, "index file")->required();
    pipeline_cmd->add_option("--model", model_file, "checkpoint (default: BM25 only)");
    pipeline_cmd->add_option("--split", split, "train|valid|test|all")->capture_default_str();
    pipeline_cmd->add_option("--out", out_path, "run file")->required();
    pipeline_cmd->add_option("--tag", tag, "run tag")->capture_default_str();

    std::string run_file, questions_filter;
    eval::Cutoffs cutoffs;
    auto* eval_cmd = app.add_subcommand("eval", "MRR@k, NDCG@k and Precision@k of a run");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--run", run_file, "run file")->required();
    eval_cmd->add_option("--qrels", qrels_file, "relevance pairs (qid<TAB>aid)")->required();
    eval_cmd->add_option("--questions", questions_filter, "question ids to evaluate (first column)");
    eval_cmd->add_option("--k-mrr", cutoffs.mrr, "MRR cutoff")->capture_default_str();
    eval_cmd->add_option("--k-ndcg", cutoffs.ndcg, "NDCG cutoff")->capture_default_str();
    eval_cmd->add_option("--k-precision", cutoffs.precision, "precision cutoff")->capture_default_str();
    eval_cmd->add_option("--out", out_path, "JSON report");

    auto* query_cmd = app.add_subcommand("query", "Interactive question loop (:quit exits)");
    add_common(query_cmd, common);
    query_cmd->add_option("--data", data_dir, "data directory")->required();
    query_cmd->add_option("--index", index_file, "index file")->required();
    query_cmd->add_option("--model", model_file, "checkpoint (default: BM25 only)");

    // ---------------------------------------------------------------- actions

    ingest_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto ds = corpus::ingest(ctx.input(questions_file), ctx.input(answers_file), ctx.input(qrels_file));
            fs::create_directories(out_path);
            const auto dir = fs::path(out_path);
            corpus::write_questions(ds.questions, (dir / "questions.tsv").string());
            corpus::write_answers(ds.corpus, (dir / "answers.tsv").string());
            corpus::write_qrels(ds.questions, (dir / "qrels.tsv").string());

            textenc::Vocabulary vocab;
            if (!vocab_file.empty()) {
                vocab = textenc::Vocabulary::load(ctx.input(vocab_file));
            } else {
                std::vector<std::vector<std::string>> tokens;
                for (const auto& [id, a] : ds.corpus) {
                    tokens.push_back(textenc::tokenize(a.text));
                }
                for (const auto& q : ds.questions) {
                    tokens.push_back(textenc::tokenize(q.text));
                }
                vocab = textenc::Vocabulary::build(tokens, min_count);
            }
            vocab.save((dir / "vocab.tsv").string());

            const std::size_t n = ds.questions.size();
            std::vector<std::size_t> counts;
            if (!split_counts.empty()) {
                counts = parse_counts(split_counts);
            } else if (kFiqaSplit[0] + kFiqaSplit[1] + kFiqaSplit[2] == n) {
                counts.assign(std::begin(kFiqaSplit), std::end(kFiqaSplit));
            } else {
                counts = {n * 8 / 10, n / 10, 0};
                counts[2] = n - counts[0] - counts[1];
            }
            auto parts = corpus::split_questions(ds.questions, counts[0], counts[1], counts[2], common.seed);
            std::ostringstream splits;
            for (const auto& [name, part] : {std::pair{"train", &parts.train}, std::pair{"valid", &parts.valid},
                                             std::pair{"test", &parts.test}}) {
                for (const auto& q : *part) {
                    splits << q.id << '\t' << name << '\n';
                }
            }
            io::write_file((dir / "splits.tsv").string(), splits.str());
            for (const char* f : {"questions.tsv", "answers.tsv", "qrels.tsv", "vocab.tsv", "splits.tsv"}) {
                ctx.output((dir / f).string());
            }
            const auto& r = ds.report;
            ctx.out << "answers   " << r.answers_kept << " kept of " << r.answers_read << '\n'
                    << "questions " << r.questions_kept << " kept of " << r.questions_read << '\n'
                    << "qrels     " << r.qrels_kept << " kept of " << r.qrels_read << '\n'
                    << "vocab     " << vocab.size() << " tokens\n"
                    << "split     " << parts.train.size() << " / " << parts.valid.size() << " / " << parts.test.size()
                    << '\n';
        };
    });

    index_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto idx = index::InvertedIndex::build(data.dataset.corpus);
            idx.save(out_path);
            ctx.output(out_path);
            ctx.out << "indexed " << idx.n_docs() << " answers, " << idx.n_terms() << " terms, avg length "
                    << idx.avg_len() << '\n';
        };
    });

    retrieve_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto idx = index::InvertedIndex::load(ctx.input(index_file));
            auto run = rankers::retrieval_run(select_split(data, split), idx, common.pool_size, common.bm25());
            eval::write_run(run, out_path, tag);
            ctx.output(out_path);
            ctx.out << "retrieved candidates for " << run.size() << " questions\n";
        };
    });

    samples_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto run = eval::read_run(ctx.input(candidates_file));
            corpus::SampleMode m;
            if (mode == "pointwise") {
                m = corpus::SampleMode::pointwise;
            } else if (mode == "pairwise") {
                m = corpus::SampleMode::pairwise;
            } else {
                throw UsageError("--mode must be pointwise or pairwise");
            }
            const auto questions = select_split(data, split);
            auto samples = corpus::build_samples(questions, to_candidates(run, questions), m, cap);
            corpus::write_samples(samples, out_path);
            ctx.output(out_path);
            ctx.out << "wrote " << std::visit([](const auto& v) { return v.size(); }, samples) << ' ' << mode
                    << " samples\n";
        };
    });

    train_cmd->callback([&] {
        action = [&](Context& ctx) {
            const auto objective = training::parse_objective(objective_name);
            if (objective == training::Objective::mlm) {
                throw UsageError("use `finrank pretrain-mlm` for the masked-LM objective");
            }
            auto data = load_data(ctx, data_dir);
            auto texts = training::TextTable::build(data.dataset.questions, data.dataset.corpus, data.vocab);
            training::TrainData td;
            td.texts = &texts;
            td.train = corpus::read_samples(ctx.input(train_samples));
            if (!valid_samples.empty()) {
                td.valid = corpus::read_samples(ctx.input(valid_samples));
            }
            auto cfg = train_config(common, model_flags, objective);
            const auto report = [&](const training::EpochRecord& r) { print_epoch(ctx.out, r); };
            training::Checkpoint ckpt;
            if (objective == training::Objective::hinge) {
                neural::QaLstmConfig lcfg;
                lcfg.vocab_size = data.vocab.size();
                lcfg.embedding_dim = model_flags.embedding_dim;
                lcfg.hidden = model_flags.hidden;
                lcfg.max_len = common.max_len;
                neural::ParameterStore params;
                if (!model_flags.init.empty()) {
                    auto init = training::load_checkpoint(ctx.input(model_flags.init));
                    training::check_vocab(init, data.vocab.hash());
                    lcfg = init.qa_lstm_config();
                    params = std::move(init.params);
                } else {
                    params = neural::make_qalstm_params(lcfg, common.seed);
                    if (!model_flags.embeddings.empty()) {
                        params.at("lstm.emb") = textenc::load_embeddings(ctx.input(model_flags.embeddings),
                                                                         data.vocab, lcfg.embedding_dim, common.seed);
                    }
                }
                ckpt = training::train_qalstm(std::move(params), lcfg, td, cfg, report);
            } else {
                auto [params, ecfg] = initial_encoder(ctx, model_flags, common, data.vocab);
                ckpt = training::train_cross_encoder(std::move(params), ecfg, td, cfg, report);
            }
            training::save_checkpoint(ckpt, out_path);
            ctx.output(out_path);
            ctx.out << "best epoch " << ckpt.best_epoch << " saved to " << out_path << '\n';
        };
    });

    mlm_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto [params, ecfg] = initial_encoder(ctx, model_flags, common, data.vocab);
            auto cfg = train_config(common, model_flags, training::Objective::mlm);
            auto ckpt = training::pretrain_mlm(std::move(params), ecfg, data.dataset.corpus, data.vocab, cfg,
                                               [&](const training::EpochRecord& r) { print_epoch(ctx.out, r); });
            training::save_checkpoint(ckpt, out_path);
            ctx.output(out_path);
            ctx.out << "encoder saved to " << out_path << '\n';
        };
    });

    tanda_cmd->callback([&] {
        action = [&](Context& ctx) {
            const auto objective = training::parse_objective(objective_name);
            if (objective != training::Objective::pointwise && objective != training::Objective::pairwise) {
                throw UsageError("tanda fine-tunes with the pointwise or pairwise objective");
            }
            auto general = load_data(ctx, general_dir, vocab_file);
            auto target = load_data(ctx, target_dir, vocab_file);
            if (general.vocab.hash() != target.vocab.hash()) {
                throw DataError("general and target data directories use different vocabularies (pass --vocab)");
            }
            auto general_texts =
                training::TextTable::build(general.dataset.questions, general.dataset.corpus, general.vocab);
            auto target_texts =
                training::TextTable::build(target.dataset.questions, target.dataset.corpus, target.vocab);
            training::TrainData g{&general_texts, corpus::read_samples(ctx.input(general_samples)), std::nullopt};
            training::TrainData t{&target_texts, corpus::read_samples(ctx.input(target_samples)), std::nullopt};
            if (!general_valid.empty()) {
                g.valid = corpus::read_samples(ctx.input(general_valid));
            }
            if (!target_valid.empty()) {
                t.valid = corpus::read_samples(ctx.input(target_valid));
            }
            auto transfer_cfg = train_config(common, model_flags, objective);
            auto adapt_cfg = transfer_cfg;
            if (adapt_lr) {
                adapt_cfg.base_lr = *adapt_lr;
            }
            if (adapt_epochs) {
                adapt_cfg.epochs = *adapt_epochs;
            }
            auto [params, ecfg] = initial_encoder(ctx, model_flags, common, general.vocab);
            auto result = training::transfer_and_adapt(std::move(params), ecfg, g, t, transfer_cfg, adapt_cfg, out_path,
                                                       [&](const training::EpochRecord& r) { print_epoch(ctx.out, r); });
            ctx.output(result.transfer_path);
            ctx.output(result.adapt_path);
            ctx.out << "transfer checkpoint " << result.transfer_path << " (best epoch " << result.transfer.best_epoch
                    << ")\nadapt checkpoint " << result.adapt_path << " (best epoch " << result.adapt.best_epoch
                    << ")\n";
        };
    });

    rerank_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto scorer = make_scorer(ctx, model_file, data, nullptr, common);
            const auto questions = select_split(data, split);
            const auto candidates = to_candidates(eval::read_run(ctx.input(candidates_file)), questions);
            eval::Run run;
            for (const auto& q : questions) {
                std::vector<std::string> ids;
                for (const auto& s : candidates.at(q.id)) {
                    ids.push_back(s.id);
                }
                run[q.id] = rankers::rerank(*scorer, q, ids, data.dataset.corpus, common.top_k).answers;
            }
            eval::write_run(run, out_path, tag);
            ctx.output(out_path);
            ctx.out << "re-ranked " << run.size() << " questions with " << scorer->name() << '\n';
        };
    });

    pipeline_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto idx = index::InvertedIndex::load(ctx.input(index_file));
            auto scorer = make_scorer(ctx, model_file, data, &idx, common);
            auto run = rankers::pipeline_run(select_split(data, split), idx, data.dataset.corpus, *scorer,
                                             common.pool_size, common.top_k, common.bm25());
            eval::write_run(run, out_path, tag);
            ctx.output(out_path);
            ctx.out << "pipeline (" << scorer->name() << ", pool " << common.pool_size << ", top " << common.top_k
                    << ") answered " << run.size() << " questions\n";
        };
    });

    eval_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto run = eval::read_run(ctx.input(run_file));
            auto judged = eval::read_qrels(ctx.input(qrels_file));
            std::vector<corpus::Question> questions;
            if (!questions_filter.empty()) {
                std::ifstream f(ctx.input(questions_filter));
                if (!f) {
                    throw DataError("cannot open " + questions_filter);
                }
                std::set<std::string> wanted;
                std::string line;
                while (std::getline(f, line)) {
                    auto id = line.substr(0, line.find('\t'));
                    if (!id.empty() && id != "qid") {
                        wanted.insert(id);
                    }
                }
                for (auto& q : judged) {
                    if (wanted.count(q.id) != 0) {
                        questions.push_back(std::move(q));
                    }
                }
            } else {
                for (auto& q : judged) {
                    if (run.count(q.id) != 0) {
                        questions.push_back(std::move(q));
                    }
                }
            }
            auto report = eval::evaluate(run, questions, cutoffs);
            ctx.out << report.to_table();
            if (!out_path.empty()) {
                io::write_file(out_path, report.to_json() + "\n");
                ctx.output(out_path);
            }
        };
    });

    query_cmd->callback([&] {
        action = [&](Context& ctx) {
            auto data = load_data(ctx, data_dir);
            auto idx = index::InvertedIndex::load(ctx.input(index_file));
            auto scorer = make_scorer(ctx, model_file, data, &idx, common);
            std::string line;
            std::size_t n = 0;
            while (std::getline(in, line)) {
                if (trim(line) == ":quit") {
                    break;
                }
                corpus::Question q{"query" + std::to_string(++n), corpus::clean_text(line), {}};
                if (q.text.empty()) {
                    continue;
                }
                auto ranked = rankers::answer_pipeline(q, idx, data.dataset.corpus, *scorer, common.pool_size,
                                                       common.top_k, common.bm25());
                if (ranked.answers.empty()) {
                    ctx.out << "(no candidate shares a term with the question)\n";
                }
                std::size_t rank = 0;
                for (const auto& a : ranked.answers) {
                    auto text = data.dataset.corpus.at(a.id).text;
                    if (text.size() > 100) {
                        text = text.substr(0, 97) + "...";
                    }
                    ctx.out << ++rank << '\t' << a.id << '\t' << format_score(a.score) << '\t' << text << '\n';
                }
                ctx.out << '\n';
                ctx.out.flush();
            }
        };
    });

    // ---------------------------------------------------------------- parse + run

    std::vector<std::string> args = raw_args;
    try {
        // Config file values go first so explicit flags (parsed later) win.
        for (std::size_t i = 1; i < args.size(); ++i) {
            std::string path;
            if (args[i] == "--config" && i + 1 < args.size()) {
                path = args[i + 1];
            } else if (args[i].rfind("--config=", 0) == 0) {
                path = args[i].substr(9);
            }
            if (!path.empty() && !args.empty()) {
                auto tokens = config_tokens(io::read_file(path), path);
                args.insert(args.begin() + 1, tokens.begin(), tokens.end());
                break;
            }
        }
    } catch (const UsageError& e) {
        err << "finrank: " << e.what() << '\n';
        return kUsage;
    } catch (const Error& e) {
        err << "finrank: " << e.what() << '\n';
        return kDataError;
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    CLI::App* chosen = app.get_subcommands().front();
    Context ctx(chosen->get_name(), chosen, common, out, err);
    try {
        action(ctx);
        output_for_manifest = out_path;
        ctx.write_manifest(output_for_manifest);
    } catch (const UsageError& e) {
        err << "finrank " << chosen->get_name() << ": " << e.what() << '\n' << chosen->help();
        return kUsage;
    } catch (const InvalidArgument& e) {
        err << "finrank " << chosen->get_name() << ": " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        err << "finrank " << chosen->get_name() << ": numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        err << "finrank " << chosen->get_name() << ": " << e.what() << '\n';
        return kDataError;
    }
    return kOk;
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cin, std::cout, std::cerr);
}

} // namespace finrank::cli
