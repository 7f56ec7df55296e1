#include "finrank/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "finrank/error.hpp"
#include "finrank/rng.hpp"

namespace finrank::synthetic {

namespace {

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
constexpr std::uint64_t kSharedTopicSeed = 0x70e1c5;

std::string numbered(const std::string& prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return prefix + buf;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) {
            out += ' ';
        }
        out += w;
    }
    return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[rng.below(v.size())];
}

} // namespace

void Config::validate() const {
    if (n_questions == 0) {
        throw InvalidArgument("synthetic benchmark needs at least one question");
    }
    if (n_answers < n_questions) {
        throw InvalidArgument("need at least one answer per question");
    }
    if (topics_per_question < 2 || topic_pool < topics_per_question) {
        throw InvalidArgument("need >= 2 topic words per question and a pool at least that large");
    }
    if (keyword_uses == 0) {
        throw InvalidArgument("keyword_uses must be >= 1");
    }
    if (filler_pool == 0 || domain.empty()) {
        throw InvalidArgument("filler pool and domain prefix must be non-empty");
    }
}

std::vector<std::string> make_words(std::size_t n, const std::string& prefix, std::uint64_t seed) {
    Rng rng(seed);
    std::set<std::string> seen;
    std::vector<std::string> out;
    out.reserve(n);
    while (out.size() < n) {
        std::string w = prefix;
        const auto syllables = 2 + rng.below(2);
        for (std::uint64_t s = 0; s < syllables; ++s) {
            w += kOnsets[rng.below(std::size(kOnsets))];
            w += kVowels[rng.below(std::size(kVowels))];
        }
        if (seen.insert(w).second) {
            out.push_back(std::move(w));
        }
    }
    return out;
}

Benchmark generate(const Config& config) {
    config.validate();
    Rng rng(config.seed);
    const std::size_t n_keywords = (config.n_questions + config.keyword_uses - 1) / config.keyword_uses;
    const auto words = make_words(n_keywords + config.topic_pool + 2 * config.filler_pool, config.domain,
                                  derive_seed(config.seed, 11));
    auto it = words.begin();
    const std::vector<std::string> keyword_pool(it, it + static_cast<std::ptrdiff_t>(n_keywords));
    it += static_cast<std::ptrdiff_t>(n_keywords);
    std::vector<std::string> keywords;
    for (std::size_t q = 0; q < config.n_questions; ++q) {
        keywords.push_back(keyword_pool[q % n_keywords]);
    }
    rng.shuffle(keywords);
    auto topics = config.topic_domain.empty()
                      ? std::vector<std::string>(it, it + static_cast<std::ptrdiff_t>(config.topic_pool))
                      : make_words(config.topic_pool, config.topic_domain, kSharedTopicSeed);
    it += static_cast<std::ptrdiff_t>(config.topic_pool);
    const std::vector<std::string> question_fillers(it, it + static_cast<std::ptrdiff_t>(config.filler_pool));
    it += static_cast<std::ptrdiff_t>(config.filler_pool);
    const std::vector<std::string> answer_fillers(it, words.end());

    // Answer ids are a random permutation so id order carries no signal.
    std::vector<std::size_t> answer_numbers(config.n_answers);
    for (std::size_t i = 0; i < config.n_answers; ++i) {
        answer_numbers[i] = i + 1;
    }
    rng.shuffle(answer_numbers);
    std::size_t next_answer = 0;
    const auto answer_id = [&]() { return numbered(config.domain + "a", answer_numbers[next_answer++]); };

    Benchmark out;
    out.keywords = keywords;
    std::vector<std::vector<std::string>> question_topics;
    std::map<std::string, std::string> keyword_answer;
    for (std::size_t q = 0; q < config.n_questions; ++q) {
        std::vector<std::string> pool = topics;
        rng.shuffle(pool);
        pool.resize(config.topics_per_question);
        question_topics.push_back(pool);

        std::vector<std::string> q_words = pool;
        q_words.push_back(keywords[q]);
        for (std::size_t f = 0; f < config.question_fillers; ++f) {
            q_words.push_back(pick(question_fillers, rng));
        }
        rng.shuffle(q_words);

        std::string aid;
        if (auto known = keyword_answer.find(keywords[q]); config.shared_answers && known != keyword_answer.end()) {
            aid = known->second;
        } else {
            std::vector<std::string> a_words{keywords[q], pick(topics, rng)};
            for (std::size_t f = 0; f < config.answer_fillers; ++f) {
                a_words.push_back(pick(answer_fillers, rng));
            }
            rng.shuffle(a_words);
            aid = answer_id();
            out.corpus.add({aid, join(a_words)});
            keyword_answer[keywords[q]] = aid;
        }
        out.questions.push_back({numbered(config.domain + "q", q + 1), join(q_words), {aid}});
    }

    // Distractors: two of a question's topic words, each twice, plus fillers.
    const std::size_t n_distractors = config.n_answers - out.corpus.size();
    for (std::size_t d = 0; d < n_distractors; ++d) {
        auto shared = question_topics[d % config.n_questions];
        rng.shuffle(shared);
        std::vector<std::string> a_words{shared[0], shared[0], shared[1], shared[1]};
        for (std::size_t f = 2; f < config.answer_fillers; ++f) {
            a_words.push_back(pick(answer_fillers, rng));
        }
        rng.shuffle(a_words);
        out.corpus.add({answer_id(), join(a_words)});
    }
    return out;
}

} // namespace finrank::synthetic
