#include <algorithm>
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "finrank/checkpoint.hpp"
#include "finrank/cli.hpp"
#include "finrank/corpus.hpp"
#include "finrank/error.hpp"
#include "finrank/evaluation.hpp"
#include "finrank/index.hpp"
#include "finrank/rankers.hpp"
#include "finrank/synthetic.hpp"
#include "finrank/textenc.hpp"

namespace py = pybind11;
using namespace finrank;

namespace {

using Pairs = std::vector<std::pair<std::string, double>>;

Pairs to_pairs(const RankedList& list) {
    Pairs out;
    for (const auto& s : list) {
        out.emplace_back(s.id, s.score);
    }
    return out;
}

std::vector<std::string> sorted_unique(std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

corpus::AnswerCorpus to_corpus(const std::map<std::string, std::string>& answers) {
    corpus::AnswerCorpus c;
    for (const auto& [id, text] : answers) {
        c.add({id, corpus::clean_text(text)});
    }
    return c;
}

/// BM25 index that keeps its corpus, so the pipeline can look texts up.
class Searcher {
public:
    explicit Searcher(const std::map<std::string, std::string>& answers)
        : corpus_(to_corpus(answers)), index_(index::InvertedIndex::build(corpus_)) {}

    Pairs retrieve(const std::string& query, std::size_t k) const {
        return to_pairs(index::retrieve(index_, textenc::tokenize(corpus::clean_text(query)), k));
    }

    double score(const std::string& query, const std::string& doc_id) const {
        return index::bm25_score(index_, textenc::tokenize(corpus::clean_text(query)), doc_id);
    }

    void save(const std::string& path) const { index_.save(path); }

    std::size_t n_docs() const { return index_.n_docs(); }
    double avg_len() const { return index_.avg_len(); }

    const corpus::AnswerCorpus& corpus() const { return corpus_; }
    const index::InvertedIndex& index() const { return index_; }

private:
    corpus::AnswerCorpus corpus_;
    index::InvertedIndex index_;
};

/// A trained checkpoint plus the vocabulary it was trained with.
class Reranker {
public:
    Reranker(const std::string& checkpoint, const std::string& vocab, std::size_t max_len)
        : vocab_(textenc::Vocabulary::load(vocab)),
          scorer_(rankers::scorer_from_checkpoint(training::load_checkpoint(checkpoint), vocab_, max_len)) {}

    double score(const std::string& question, const std::string& answer) const {
        return scorer_->score(corpus::clean_text(question), corpus::clean_text(answer));
    }

    Pairs search(const Searcher& searcher, const std::string& question, std::size_t pool_size,
                 std::size_t top_k) const {
        const corpus::Question q{"query", corpus::clean_text(question), {}};
        return to_pairs(
            rankers::answer_pipeline(q, searcher.index(), searcher.corpus(), *scorer_, pool_size, top_k).answers);
    }

    std::string name() const { return scorer_->name(); }

private:
    textenc::Vocabulary vocab_;
    std::unique_ptr<rankers::Scorer> scorer_;
};

py::dict evaluate(const std::map<std::string, Pairs>& run, const std::map<std::string, std::vector<std::string>>& qrels,
                  std::size_t k_mrr, std::size_t k_ndcg, std::size_t k_precision) {
    eval::Run r;
    for (const auto& [qid, pairs] : run) {
        auto& list = r[qid];
        for (const auto& [id, score] : pairs) {
            list.push_back({id, score});
        }
    }
    std::vector<corpus::Question> questions;
    for (const auto& [qid, relevant] : qrels) {
        corpus::Question q;
        q.id = qid;
        q.relevant_ids = sorted_unique(relevant);
        questions.push_back(std::move(q));
    }
    const auto report = eval::evaluate(r, questions, {k_mrr, k_ndcg, k_precision});
    py::dict d;
    d["mrr"] = report.mrr;
    d["ndcg"] = report.ndcg;
    d["precision"] = report.precision;
    d["questions"] = report.question_count;
    return d;
}

py::dict generate(std::size_t n_questions, std::size_t n_answers, std::uint64_t seed, std::size_t keyword_uses,
                  const std::string& domain) {
    synthetic::Config c;
    c.n_questions = n_questions;
    c.n_answers = n_answers;
    c.seed = seed;
    c.keyword_uses = keyword_uses;
    c.domain = domain;
    const auto b = synthetic::generate(c);
    std::map<std::string, std::string> answers;
    for (const auto& [id, a] : b.corpus) {
        answers[id] = a.text;
    }
    std::map<std::string, std::string> questions;
    std::map<std::string, std::vector<std::string>> qrels;
    for (const auto& q : b.questions) {
        questions[q.id] = q.text;
        qrels[q.id] = q.relevant_ids;
    }
    py::dict d;
    d["answers"] = answers;
    d["questions"] = questions;
    d["qrels"] = qrels;
    return d;
}

py::tuple run_cli(const std::vector<std::string>& args, const std::string& input) {
    std::istringstream in(input);
    std::ostringstream out, err;
    const int code = cli::dispatch(args, in, out, err);
    return py::make_tuple(code, out.str(), err.str());
}

} // namespace

PYBIND11_MODULE(_finrank, m) {
    m.doc() = "BM25 retrieval and neural re-ranking for financial answer selection";

    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("clean_text", &corpus::clean_text, py::arg("text"));
    m.def("tokenize", &textenc::tokenize, py::arg("text"));

    py::class_<Searcher>(m, "Searcher")
        .def(py::init<const std::map<std::string, std::string>&>(), py::arg("answers"))
        .def("retrieve", &Searcher::retrieve, py::arg("query"), py::arg("k") = 50)
        .def("score", &Searcher::score, py::arg("query"), py::arg("doc_id"))
        .def("save", &Searcher::save, py::arg("path"))
        .def_property_readonly("n_docs", &Searcher::n_docs)
        .def_property_readonly("avg_len", &Searcher::avg_len);

    py::class_<Reranker>(m, "Reranker")
        .def(py::init<const std::string&, const std::string&, std::size_t>(), py::arg("checkpoint"),
             py::arg("vocab"), py::arg("max_len") = 128)
        .def("score", &Reranker::score, py::arg("question"), py::arg("answer"))
        .def("search", &Reranker::search, py::arg("searcher"), py::arg("question"), py::arg("pool_size") = 50,
             py::arg("top_k") = 10)
        .def_property_readonly("name", &Reranker::name);

    py::class_<index::Bm25Params>(m, "Bm25Params")
        .def(py::init<>())
        .def_readwrite("k1", &index::Bm25Params::k1)
        .def_readwrite("b", &index::Bm25Params::b);
    m.def("bm25_term_weight", &index::term_weight, py::arg("n_docs"), py::arg("df"), py::arg("tf"),
          py::arg("doc_len"), py::arg("avg_len"), py::arg("params") = index::Bm25Params{});

    m.def(
        "reciprocal_rank",
        [](const std::vector<std::string>& ranked, std::vector<std::string> relevant, std::size_t k) {
            return eval::reciprocal_rank(ranked, sorted_unique(std::move(relevant)), k);
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("k") = 10);
    m.def(
        "ndcg",
        [](const std::vector<std::string>& ranked, std::vector<std::string> relevant, std::size_t k) {
            return eval::ndcg(ranked, sorted_unique(std::move(relevant)), k);
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("k") = 10);
    m.def(
        "precision_at_k",
        [](const std::vector<std::string>& ranked, std::vector<std::string> relevant, std::size_t k) {
            return eval::precision_at_k(ranked, sorted_unique(std::move(relevant)), k);
        },
        py::arg("ranked"), py::arg("relevant"), py::arg("k") = 1);
    m.def("evaluate", &evaluate, py::arg("run"), py::arg("qrels"), py::arg("k_mrr") = 10, py::arg("k_ndcg") = 10,
          py::arg("k_precision") = 1);

    m.def("generate_synthetic", &generate, py::arg("n_questions") = 60, py::arg("n_answers") = 300,
          py::arg("seed") = 7, py::arg("keyword_uses") = 5, py::arg("domain") = "s");

    m.def("run_cli", &run_cli, py::arg("args"), py::arg("input") = "",
          "Runs one finrank subcommand; returns (exit_code, stdout, stderr).");
}
