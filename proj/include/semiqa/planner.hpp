#pragma once
// Relation-path planning: extract target path distributions from gold
// answers, score answer distributions conditioned on generated paths, build
// the instruction-tuning corpus, and generate plans from pluggable path
// models (smoothed frequency model or an LLM prompted in-context).

#include "semiqa/graph.hpp"
#include "semiqa/llm.hpp"
#include "semiqa/matcher.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace semiqa {

struct ScoredPath {
    RelationPath path;
    double score;
    bool operator==(const ScoredPath&) const = default;
};

// Inference-time plan: matched topic nodes plus scored relation paths,
// scores non-increasing.
struct Plan {
    std::vector<std::string> seeds;
    std::vector<ScoredPath> paths;
};

// Training-time target: the shortest relation paths from the topic nodes to
// any gold answer, all of one minimal length, weighted uniformly.
struct PlanTarget {
    std::string question_id;
    std::vector<std::string> seeds;
    std::vector<RelationPath> paths;

    double weight() const {
        return paths.empty() ? 0.0 : 1.0 / static_cast<double>(paths.size());
    }
};

struct PlanExample {
    Question question;
    PlanTarget target;
};

struct TrainingExample {
    std::string question_id;
    std::string prompt;
    std::string completion;
};

class PathModel {
public:
    virtual ~PathModel() = default;
    // log P(z|q) under the model's factorization; -inf for impossible paths.
    virtual double log_prob(const Question& q, const RelationPath& z) const = 0;
    // Up to n most probable paths, scores (= probabilities) non-increasing.
    virtual std::vector<ScoredPath> generate(const Question& q, std::size_t n) const = 0;
};

// ---- target distribution and answer scoring ----

// Z*: shortest relation paths from `seeds` to any gold answer, re-filtered to
// the globally minimal length and deduplicated. Unreachable gold collapses to
// the pure-text plan. Throws std::invalid_argument on empty seeds/gold.
PlanTarget target_distribution(const Question& q,
                               const std::vector<std::string>& gold,
                               const SemiStructuredGraph& graph,
                               const std::vector<std::string>& seeds,
                               std::size_t max_len);

// Everything p_semi / answer_distribution need beyond the graph: the text
// plan falls back to top-k embedding retrieval.
struct PlannerContext {
    const SemiStructuredGraph* graph = nullptr;
    const EmbeddingIndex* embeddings = nullptr;
    EmbeddingProvider* provider = nullptr;
    std::size_t k = kDefaultTopK;
};

// Uniform probability of `answer` over the nodes reached by path `z` from
// `seeds` (or over the top-k retrieved nodes for the text plan); 0 otherwise.
double p_semi(const PlannerContext& ctx, const std::string& question_text,
              const std::vector<std::string>& seeds, const RelationPath& z,
              const std::string& answer);

// Truncated answer marginal: sum of p_semi over the model's top-n_paths
// generated paths with renormalized scores.
std::map<std::string, double> answer_distribution(const PlannerContext& ctx,
                                                  const Question& q,
                                                  const PathModel& model,
                                                  const std::vector<std::string>& seeds,
                                                  std::size_t n_paths);

// Mean over questions of -(1/|Z*|) * sum_z log P(z|q). +infinity when the
// model assigns some target path zero probability (diagnostic, not an error).
double kl_loss(const PathModel& model, const std::vector<PlanExample>& examples);

// ---- corpus serialization ----

std::string serialize_path(const RelationPath& z);
std::string corpus_prompt(const std::string& question_text);

struct PathParse {
    std::optional<RelationPath> path;
    bool trailing_content = false;  // prose after the close marker (ignored)
    std::string error;
    std::size_t error_pos = 0;

    bool ok() const { return path.has_value(); }
};

PathParse parse_path(const std::string& serialized);

// One example per (question, target path) pair.
std::vector<TrainingExample> build_corpus(const std::vector<PlanExample>& examples);

void write_corpus(std::ostream& out, const std::vector<TrainingExample>& corpus);
std::vector<TrainingExample> load_corpus(std::istream& in);

void write_plan_cache_entry(std::ostream& out, const std::string& question_id,
                            const Plan& plan);
std::vector<std::pair<std::string, Plan>> load_plan_cache(std::istream& in);

Plan plan_from_target(const PlanTarget& target);

// ---- batch target extraction (parallel over questions) ----

struct GoldQuestion {
    Question question;
    std::vector<std::string> gold;
};

std::vector<PlanExample> build_targets_serial(const Matcher& matcher,
                                              const std::vector<GoldQuestion>& questions,
                                              std::size_t max_len, std::size_t k);
std::vector<PlanExample> build_targets_parallel(const Matcher& matcher,
                                                const std::vector<GoldQuestion>& questions,
                                                std::size_t max_len, std::size_t k);
std::vector<PlanExample> build_targets(const Matcher& matcher,
                                       const std::vector<GoldQuestion>& questions,
                                       std::size_t max_len, std::size_t k);

// ---- path models ----

// Conditional next-relation model estimated by additively smoothed counts,
// conditioned on the previous relation and question features (node types of
// keyword-matched topic nodes plus hashed question-token buckets).
class FrequencyPathModel final : public PathModel {
public:
    static FrequencyPathModel fit(const std::vector<TrainingExample>& corpus,
                                  const SemiStructuredGraph& graph,
                                  double epsilon = 0.01, std::size_t max_len = 3);
    // No observations: every step is uniform over the valid alphabet.
    static FrequencyPathModel uniform(const SemiStructuredGraph& graph,
                                      double epsilon = 0.01, std::size_t max_len = 3);

    double log_prob(const Question& q, const RelationPath& z) const override;
    std::vector<ScoredPath> generate(const Question& q, std::size_t n) const override;

    void save(std::ostream& out) const;
    static FrequencyPathModel load(std::istream& in, const SemiStructuredGraph& graph);

    double epsilon() const { return epsilon_; }
    std::size_t max_len() const { return max_len_; }

private:
    FrequencyPathModel(const SemiStructuredGraph& graph, double epsilon,
                       std::size_t max_len);

    std::vector<std::string> features(const Question& q) const;
    std::vector<std::string> valid_next(const std::vector<std::string>& prefix) const;
    double step_log_prob(const std::vector<std::string>& feats,
                         const std::string& prev, const std::string& token,
                         const std::vector<std::string>& valid) const;
    void add_observation(const Question& q, const RelationPath& z);
    void rebuild_vocab();

    const SemiStructuredGraph* graph_;
    std::shared_ptr<const Matcher> matcher_;
    double epsilon_;
    std::size_t max_len_;
    std::vector<std::string> relation_tokens_;  // relations + inverses + extras
    // feature -> prev token -> next token -> count
    std::map<std::string, std::map<std::string, std::map<std::string, double>>> counts_;
    std::vector<std::string> extra_tokens_;  // corpus tokens outside the schema
};

// ---- in-context path generation ----

// Zero shots reproduces the training prompt; otherwise the instruction line,
// one "<Question i> ...: <PATH>...</PATH>" line per shot, then the bare
// target question.
std::string build_path_prompt(
    const std::string& question_text,
    const std::vector<std::pair<std::string, RelationPath>>& shots);

struct LlmPathResult {
    std::vector<ScoredPath> paths;  // uniform 1/n scores
    std::string raw;
    std::vector<std::string> diagnostics;
};

LlmPathResult llm_generate_paths(
    const Question& q, Backend& backend, const std::vector<std::string>& schema,
    const std::vector<std::pair<std::string, RelationPath>>& shots,
    const std::string& model_label = "default");

}  // namespace semiqa
