#include "finrank/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "finrank/binary_io.hpp"
#include "finrank/error.hpp"
#include "finrank/rng.hpp"

namespace finrank::corpus {

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

struct Record {
    std::string first;
    std::string second;
    std::size_t line = 0;
};

std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        auto tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            break;
        }
        fields.emplace_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

/// Accepted header names for the id and text columns of one file kind.
struct Columns {
    std::vector<std::string> keys;
    std::vector<std::string> values;
};

std::ptrdiff_t find_column(const std::vector<std::string>& header, const std::vector<std::string>& names) {
    for (const auto& n : names) {
        auto it = std::find(header.begin(), header.end(), n);
        if (it != header.end()) {
            return it - header.begin();
        }
    }
    return -1;
}

// Two columns, or any layout with a header row naming the id and text columns
// (the FiQA release adds an unnamed index column and a timestamp).
std::vector<Record> read_tsv_pairs(const std::string& path, const Columns& columns) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    std::vector<Record> records;
    std::string line;
    std::size_t lineno = 0;
    std::size_t key_col = 0;
    std::size_t value_col = 1;
    std::size_t width = 2;
    bool exact_width = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto fields = split_tabs(line);
        if (records.empty() && lineno == 1) {
            const auto k = find_column(fields, columns.keys);
            if (k >= 0) {
                const auto v = find_column(fields, columns.values);
                if (v < 0 || v == k) {
                    throw DataError(path + ":1: header lacks a text column");
                }
                key_col = static_cast<std::size_t>(k);
                value_col = static_cast<std::size_t>(v);
                width = fields.size();
                exact_width = width == 2;
                continue;
            }
        }
        const bool ok = exact_width ? fields.size() == width : fields.size() > std::max(key_col, value_col);
        if (!ok) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                            " tab-separated fields, got " + std::to_string(fields.size()));
        }
        records.push_back({std::move(fields[key_col]), std::move(fields[value_col]), lineno});
    }
    return records;
}

// JSON form: an array of objects carrying the TSV column names.
std::vector<Record> read_json_pairs(const std::string& path, const char* key, const char* value_key,
                                    const char* alt_value_key) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw DataError(path + ": expected a JSON array");
    }
    std::vector<Record> records;
    std::size_t i = 0;
    for (const auto& item : doc) {
        ++i;
        const char* vk = item.contains(value_key) ? value_key : alt_value_key;
        if (!item.is_object() || !item.contains(key) || !item.contains(vk) || !item[key].is_string() ||
            !item[vk].is_string()) {
            throw DataError(path + ": record " + std::to_string(i) + ": expected string fields '" + key +
                            "' and '" + value_key + "'");
        }
        records.push_back({item[key].get<std::string>(), item[vk].get<std::string>(), i});
    }
    return records;
}

std::vector<Record> read_pairs(const std::string& path, const char* key, const char* value_key,
                               const char* alt_value_key, const Columns& columns) {
    if (ends_with(path, ".json")) {
        return read_json_pairs(path, key, value_key, alt_value_key);
    }
    return read_tsv_pairs(path, columns);
}

void write_lines(const std::string& path, const std::string& body) { io::write_file(path, body); }

} // namespace

bool Question::is_relevant(std::string_view answer_id) const {
    return std::binary_search(relevant_ids.begin(), relevant_ids.end(), answer_id);
}

AnswerCorpus::AnswerCorpus(std::vector<Answer> answers) {
    for (auto& a : answers) {
        add(std::move(a));
    }
}

void AnswerCorpus::add(Answer answer) {
    if (answer.id.empty()) {
        throw DataError("answer with empty id");
    }
    if (answer.text.empty()) {
        throw DataError("answer " + answer.id + " has empty text");
    }
    auto id = answer.id;
    if (!answers_.emplace(id, std::move(answer)).second) {
        throw DataError("duplicate answer id " + id);
    }
}

bool AnswerCorpus::contains(std::string_view id) const { return answers_.find(id) != answers_.end(); }

const Answer& AnswerCorpus::at(std::string_view id) const {
    auto it = answers_.find(id);
    if (it == answers_.end()) {
        throw DataError("unknown answer id " + std::string(id));
    }
    return it->second;
}

std::string clean_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (unsigned char c : raw) {
        const bool keep = (c < 0x80) && (std::isalnum(c) != 0);
        if (keep) {
            if (pending_space && !out.empty()) {
                out.push_back(' ');
            }
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

Dataset ingest(const std::string& questions_file, const std::string& answers_file,
               const std::string& qrels_file) {
    Dataset ds;
    auto answer_rows = read_pairs(answers_file, "aid", "answer", "text", {{"aid", "docid"}, {"answer", "text", "doc"}});
    auto question_rows = read_pairs(questions_file, "qid", "question", "text", {{"qid"}, {"question", "text"}});
    auto qrel_rows = read_pairs(qrels_file, "qid", "aid", "aid", {{"qid"}, {"aid", "docid"}});

    std::set<std::string, std::less<>> all_answer_ids;
    for (auto& r : answer_rows) {
        if (!all_answer_ids.insert(r.first).second) {
            throw DataError(answers_file + ":" + std::to_string(r.line) + ": duplicate answer id " + r.first);
        }
        auto text = clean_text(r.second);
        if (!text.empty()) {
            ds.corpus.add({r.first, std::move(text)});
        }
    }
    ds.report.answers_read = answer_rows.size();
    ds.report.answers_kept = ds.corpus.size();

    std::map<std::string, std::string, std::less<>> question_text;
    std::vector<std::string> question_order;
    for (auto& r : question_rows) {
        if (question_text.count(r.first)) {
            throw DataError(questions_file + ":" + std::to_string(r.line) + ": duplicate question id " + r.first);
        }
        question_order.push_back(r.first);
        question_text.emplace(r.first, clean_text(r.second));
    }
    ds.report.questions_read = question_rows.size();

    std::set<std::string> dangling;
    std::map<std::string, std::set<std::string>, std::less<>> truth;
    for (auto& r : qrel_rows) {
        if (!all_answer_ids.count(r.second)) {
            dangling.insert("answer " + r.second);
            continue;
        }
        if (!question_text.count(r.first)) {
            dangling.insert("question " + r.first);
            continue;
        }
        if (ds.corpus.contains(r.second)) {
            truth[r.first].insert(r.second);
        }
    }
    if (!dangling.empty()) {
        std::string msg = qrels_file + ": dangling ids:";
        for (const auto& d : dangling) {
            msg += " " + d;
        }
        throw DataError(msg);
    }
    ds.report.qrels_read = qrel_rows.size();

    for (const auto& qid : question_order) {
        auto it = truth.find(qid);
        const auto& text = question_text.at(qid);
        if (it == truth.end() || it->second.empty() || text.empty()) {
            continue;
        }
        ds.questions.push_back({qid, text, {it->second.begin(), it->second.end()}});
        ds.report.qrels_kept += it->second.size();
    }
    ds.report.questions_kept = ds.questions.size();
    return ds;
}

void write_questions(const std::vector<Question>& questions, const std::string& path) {
    std::string body;
    for (const auto& q : questions) {
        body += q.id + '\t' + q.text + '\n';
    }
    write_lines(path, body);
}

void write_answers(const AnswerCorpus& corpus, const std::string& path) {
    std::string body;
    for (const auto& [id, a] : corpus) {
        body += id + '\t' + a.text + '\n';
    }
    write_lines(path, body);
}

void write_qrels(const std::vector<Question>& questions, const std::string& path) {
    std::string body;
    for (const auto& q : questions) {
        for (const auto& aid : q.relevant_ids) {
            body += q.id + '\t' + aid + '\n';
        }
    }
    write_lines(path, body);
}

DatasetSplit split_questions(std::vector<Question> questions, std::size_t n_train, std::size_t n_valid,
                             std::size_t n_test, std::uint64_t seed) {
    if (n_train + n_valid + n_test != questions.size()) {
        throw InvalidArgument("split counts " + std::to_string(n_train) + "+" + std::to_string(n_valid) + "+" +
                              std::to_string(n_test) + " do not sum to " + std::to_string(questions.size()));
    }
    std::set<std::string> seen;
    for (const auto& q : questions) {
        if (!seen.insert(q.id).second) {
            throw DataError("duplicate question id " + q.id);
        }
    }
    Rng rng(seed);
    rng.shuffle(questions);
    DatasetSplit split;
    auto it = std::make_move_iterator(questions.begin());
    split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
    it += static_cast<std::ptrdiff_t>(n_train);
    split.valid.assign(it, it + static_cast<std::ptrdiff_t>(n_valid));
    it += static_cast<std::ptrdiff_t>(n_valid);
    split.test.assign(it, it + static_cast<std::ptrdiff_t>(n_test));
    return split;
}

namespace {

const RankedList& pool_for(const CandidateLists& candidates, const std::string& qid) {
    auto it = candidates.find(qid);
    if (it == candidates.end()) {
        throw DataError("question " + qid + " has no candidate list");
    }
    return it->second;
}

} // namespace

std::vector<LabeledSample> build_pointwise(const std::vector<Question>& questions,
                                           const CandidateLists& candidates) {
    std::vector<LabeledSample> out;
    for (const auto& q : questions) {
        const auto& pool = pool_for(candidates, q.id);
        std::set<std::string> in_pool;
        for (const auto& c : pool) {
            in_pool.insert(c.id);
            out.push_back({q.id, c.id, q.is_relevant(c.id) ? 1 : 0});
        }
        for (const auto& aid : q.relevant_ids) {
            if (!in_pool.count(aid)) {
                out.push_back({q.id, aid, 1});
            }
        }
    }
    return out;
}

std::vector<TripleSample> build_pairwise(const std::vector<Question>& questions, const CandidateLists& candidates,
                                         std::optional<std::size_t> per_question_cap) {
    std::vector<TripleSample> out;
    for (const auto& q : questions) {
        const auto& pool = pool_for(candidates, q.id);
        std::vector<std::string> negatives;
        for (const auto& c : pool) {
            if (!q.is_relevant(c.id)) {
                negatives.push_back(c.id);
            }
        }
        std::size_t emitted = 0;
        for (const auto& pos : q.relevant_ids) {
            for (const auto& neg : negatives) {
                if (per_question_cap && emitted >= *per_question_cap) {
                    break;
                }
                out.push_back({q.id, pos, neg});
                ++emitted;
            }
        }
    }
    return out;
}

SampleSet build_samples(const std::vector<Question>& questions, const CandidateLists& candidates, SampleMode mode,
                        std::optional<std::size_t> per_question_cap) {
    if (mode == SampleMode::pointwise) {
        return build_pointwise(questions, candidates);
    }
    return build_pairwise(questions, candidates, per_question_cap);
}

void write_samples(const SampleSet& samples, const std::string& path) {
    std::string body;
    if (const auto* point = std::get_if<std::vector<LabeledSample>>(&samples)) {
        body = "#pointwise\n";
        for (const auto& s : *point) {
            body += s.question_id + '\t' + s.answer_id + '\t' + std::to_string(s.label) + '\n';
        }
    } else {
        body = "#pairwise\n";
        for (const auto& s : std::get<std::vector<TripleSample>>(samples)) {
            body += s.question_id + '\t' + s.positive_id + '\t' + s.negative_id + '\n';
        }
    }
    io::write_file(path, body);
}

SampleSet read_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line) || (line != "#pointwise" && line != "#pairwise")) {
        throw DataError(path + ":1: expected '#pointwise' or '#pairwise' header");
    }
    const bool pointwise = line == "#pointwise";
    std::vector<LabeledSample> point;
    std::vector<TripleSample> pair;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        auto f = split_tabs(line);
        if (f.size() != 3) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
        }
        if (pointwise) {
            if (f[2] != "0" && f[2] != "1") {
                throw DataError(path + ":" + std::to_string(lineno) + ": label must be 0 or 1");
            }
            point.push_back({f[0], f[1], f[2] == "1" ? 1 : 0});
        } else {
            pair.push_back({f[0], f[1], f[2]});
        }
    }
    if (pointwise) {
        return point;
    }
    return pair;
}

std::map<std::string, const Question*> by_id(const std::vector<Question>& questions) {
    std::map<std::string, const Question*> out;
    for (const auto& q : questions) {
        out.emplace(q.id, &q);
    }
    return out;
}

} // namespace finrank::corpus
