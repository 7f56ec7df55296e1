#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace finrank {

/// Ranked (answer_id, score) list; shared by retrieval output and runs.
struct ScoredId {
    std::string id;
    double score = 0.0;

    bool operator==(const ScoredId&) const = default;
};
using RankedList = std::vector<ScoredId>;

/// question id -> ranked candidate pool.
using CandidateLists = std::map<std::string, RankedList>;

} // namespace finrank

namespace finrank::corpus {

struct Answer {
    std::string id;
    std::string text;

    bool operator==(const Answer&) const = default;
};

struct Question {
    std::string id;
    std::string text;
    /// Sorted, unique ground-truth answer ids.
    std::vector<std::string> relevant_ids;

    bool is_relevant(std::string_view answer_id) const;
    bool operator==(const Question&) const = default;
};

/// Answers keyed by id; iteration order is id-ascending.
class AnswerCorpus {
public:
    AnswerCorpus() = default;
    explicit AnswerCorpus(std::vector<Answer> answers);

    void add(Answer answer);
    bool contains(std::string_view id) const;
    const Answer& at(std::string_view id) const;
    std::size_t size() const { return answers_.size(); }
    bool empty() const { return answers_.empty(); }

    auto begin() const { return answers_.begin(); }
    auto end() const { return answers_.end(); }

    bool operator==(const AnswerCorpus&) const = default;

private:
    std::map<std::string, Answer, std::less<>> answers_;
};

struct DatasetSplit {
    std::vector<Question> train;
    std::vector<Question> valid;
    std::vector<Question> test;
};

struct LabeledSample {
    std::string question_id;
    std::string answer_id;
    int label = 0;

    bool operator==(const LabeledSample&) const = default;
};

struct TripleSample {
    std::string question_id;
    std::string positive_id;
    std::string negative_id;

    bool operator==(const TripleSample&) const = default;
};

enum class SampleMode { pointwise, pairwise };

using SampleSet = std::variant<std::vector<LabeledSample>, std::vector<TripleSample>>;

struct IngestReport {
    std::size_t answers_read = 0;
    std::size_t answers_kept = 0;
    std::size_t questions_read = 0;
    std::size_t questions_kept = 0;
    std::size_t qrels_read = 0;
    std::size_t qrels_kept = 0;
};

struct Dataset {
    AnswerCorpus corpus;
    std::vector<Question> questions;
    IngestReport report;
};

/// Lowercase ASCII letters/digits survive; every other character becomes a
/// separator. Whitespace runs collapse to one space and the result is trimmed.
std::string clean_text(std::string_view raw);

/// Loads questions/answers/qrels. Each file is TSV unless its extension is
/// .json. Throws DataError on malformed lines (file:line) or dangling qrels.
Dataset ingest(const std::string& questions_file, const std::string& answers_file,
               const std::string& qrels_file);

/// Inverse of ingest for already-cleaned records (TSV).
void write_questions(const std::vector<Question>& questions, const std::string& path);
void write_answers(const AnswerCorpus& corpus, const std::string& path);
void write_qrels(const std::vector<Question>& questions, const std::string& path);

/// Seeded shuffle followed by contiguous (train, valid, test) assignment.
DatasetSplit split_questions(std::vector<Question> questions,
                             std::size_t n_train, std::size_t n_valid, std::size_t n_test,
                             std::uint64_t seed);

/// Pointwise: a label per pool member plus label-1 rows for unretrieved truth.
/// Pairwise: positives x (pool \ truth), optionally capped per question.
SampleSet build_samples(const std::vector<Question>& questions, const CandidateLists& candidates,
                        SampleMode mode, std::optional<std::size_t> per_question_cap = std::nullopt);

std::vector<LabeledSample> build_pointwise(const std::vector<Question>& questions,
                                           const CandidateLists& candidates);
std::vector<TripleSample> build_pairwise(const std::vector<Question>& questions,
                                         const CandidateLists& candidates,
                                         std::optional<std::size_t> per_question_cap = std::nullopt);

/// Sample files: pointwise rows `qid<TAB>aid<TAB>label`, pairwise rows
/// `qid<TAB>pos<TAB>neg`.
void write_samples(const SampleSet& samples, const std::string& path);
SampleSet read_samples(const std::string& path);

/// Index questions by id.
std::map<std::string, const Question*> by_id(const std::vector<Question>& questions);

} // namespace finrank::corpus
