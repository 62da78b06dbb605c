#include "semiqa/planner.hpp"

#include "semiqa/text_norm.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace semiqa {

using nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const std::string kPromptPrefix =
    "Please generate a valid relation path that can be helpful for answering "
    "the following question: ";
const std::string kPathOpen = "<PATH>";
const std::string kPathClose = "</PATH>";
const std::string kPathSep = "<SEP>";
const std::string kStartToken = "<s>";
const std::string kStopToken = "</s>";
}  // namespace

PlanTarget target_distribution(const Question& q,
                               const std::vector<std::string>& gold,
                               const SemiStructuredGraph& graph,
                               const std::vector<std::string>& seeds,
                               std::size_t max_len) {
    if (seeds.empty()) {
        throw std::invalid_argument("target_distribution: empty topic node set");
    }
    if (gold.empty()) {
        throw std::invalid_argument("target_distribution: empty gold answer set");
    }
    std::set<RelationPath> pool;
    for (const std::string& answer : gold) {
        for (auto& z : graph.shortest_relation_paths(seeds, answer, max_len)) {
            pool.insert(std::move(z));
        }
    }
    PlanTarget target;
    target.question_id = q.id;
    target.seeds = seeds;
    if (pool.empty()) {
        target.paths.push_back(text_path());
        return target;
    }
    std::size_t min_len = std::numeric_limits<std::size_t>::max();
    for (const auto& z : pool) min_len = std::min(min_len, z.length());
    for (const auto& z : pool) {
        if (z.length() == min_len) target.paths.push_back(z);
    }
    return target;
}

double p_semi(const PlannerContext& ctx, const std::string& question_text,
              const std::vector<std::string>& seeds, const RelationPath& z,
              const std::string& answer) {
    const SemiStructuredGraph& g = *ctx.graph;
    if (z.is_text()) {
        if (!ctx.embeddings || !ctx.provider || ctx.k == 0) return 0.0;
        EmbeddingVector query = ctx.provider->embed(question_text);
        auto top = ctx.embeddings->top_k(query, ctx.k);
        if (top.empty()) return 0.0;
        auto answer_idx = g.find(answer);
        if (!answer_idx) return 0.0;
        for (const ScoredNode& s : top) {
            if (s.node == *answer_idx) {
                return 1.0 / static_cast<double>(top.size());
            }
        }
        return 0.0;
    }
    std::vector<NodeIndex> seed_idx;
    seed_idx.reserve(seeds.size());
    for (const auto& s : seeds) {
        if (auto idx = g.find(s)) seed_idx.push_back(*idx);
    }
    auto reached = g.reachable(seed_idx, z);
    if (reached.empty()) return 0.0;
    auto answer_idx = g.find(answer);
    if (!answer_idx) return 0.0;
    if (!std::binary_search(reached.begin(), reached.end(), *answer_idx)) return 0.0;
    return 1.0 / static_cast<double>(reached.size());
}

std::map<std::string, double> answer_distribution(const PlannerContext& ctx,
                                                  const Question& q,
                                                  const PathModel& model,
                                                  const std::vector<std::string>& seeds,
                                                  std::size_t n_paths) {
    std::map<std::string, double> out;
    auto generated = model.generate(q, n_paths);
    double total = 0.0;
    for (const auto& sp : generated) total += sp.score;
    if (total <= 0.0) return out;

    const SemiStructuredGraph& g = *ctx.graph;
    for (const auto& sp : generated) {
        const double path_mass = sp.score / total;
        if (sp.path.is_text()) {
            if (!ctx.embeddings || !ctx.provider || ctx.k == 0) continue;
            EmbeddingVector query = ctx.provider->embed(q.text);
            auto top = ctx.embeddings->top_k(query, ctx.k);
            for (const ScoredNode& s : top) {
                out[g.node(s.node).id] += path_mass / static_cast<double>(top.size());
            }
            continue;
        }
        std::vector<NodeIndex> seed_idx;
        for (const auto& s : seeds) {
            if (auto idx = g.find(s)) seed_idx.push_back(*idx);
        }
        auto reached = g.reachable(seed_idx, sp.path);
        for (NodeIndex n : reached) {
            out[g.node(n).id] += path_mass / static_cast<double>(reached.size());
        }
    }
    return out;
}

double kl_loss(const PathModel& model, const std::vector<PlanExample>& examples) {
    if (examples.empty()) {
        throw std::invalid_argument("kl_loss: no examples");
    }
    double sum = 0.0;
    for (const auto& ex : examples) {
        if (ex.target.paths.empty()) {
            throw std::invalid_argument("kl_loss: target with empty path set for " +
                                        ex.question.id);
        }
        double q_sum = 0.0;
        for (const auto& z : ex.target.paths) {
            double lp = model.log_prob(ex.question, z);
            if (lp == kNegInf) return std::numeric_limits<double>::infinity();
            q_sum += lp;
        }
        sum += -q_sum / static_cast<double>(ex.target.paths.size());
    }
    return sum / static_cast<double>(examples.size());
}

// ---- serialization ----

std::string serialize_path(const RelationPath& z) {
    std::string out = kPathOpen;
    for (std::size_t i = 0; i < z.hops.size(); ++i) {
        if (i > 0) out += " " + kPathSep;
        out += " " + z.hops[i];
    }
    out += " " + kPathClose;
    return out;
}

std::string corpus_prompt(const std::string& question_text) {
    return kPromptPrefix + question_text + ".";
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

PathParse parse_path(const std::string& serialized) {
    PathParse result;
    std::size_t open = serialized.find(kPathOpen);
    if (open == std::string::npos) {
        result.error = "missing " + kPathOpen + " marker";
        result.error_pos = 0;
        return result;
    }
    std::size_t body_begin = open + kPathOpen.size();
    std::size_t close = serialized.find(kPathClose, body_begin);
    if (close == std::string::npos) {
        result.error = "missing " + kPathClose + " marker";
        result.error_pos = open;
        return result;
    }

    std::vector<std::string> hops;
    std::size_t cursor = body_begin;
    while (true) {
        std::size_t sep = serialized.find(kPathSep, cursor);
        std::size_t end = (sep != std::string::npos && sep < close) ? sep : close;
        std::string hop = trim(std::string_view(serialized).substr(cursor, end - cursor));
        if (hop.empty()) {
            result.error = "empty hop between markers";
            result.error_pos = cursor;
            return result;
        }
        hops.push_back(std::move(hop));
        if (end == close) break;
        cursor = end + kPathSep.size();
    }
    bool has_text = std::find(hops.begin(), hops.end(), kTextLabel) != hops.end();
    if (has_text && hops.size() > 1) {
        result.error = "text hop mixed with relations";
        result.error_pos = body_begin;
        return result;
    }
    std::string tail = trim(std::string_view(serialized).substr(close + kPathClose.size()));
    result.trailing_content = !tail.empty();
    result.path = RelationPath(std::move(hops));
    return result;
}

std::vector<TrainingExample> build_corpus(const std::vector<PlanExample>& examples) {
    std::vector<TrainingExample> corpus;
    for (const auto& ex : examples) {
        for (const auto& z : ex.target.paths) {
            corpus.push_back({ex.question.id, corpus_prompt(ex.question.text),
                              serialize_path(z)});
        }
    }
    return corpus;
}

void write_corpus(std::ostream& out, const std::vector<TrainingExample>& corpus) {
    for (const auto& ex : corpus) {
        json j;
        j["question_id"] = ex.question_id;
        j["prompt"] = ex.prompt;
        j["completion"] = ex.completion;
        out << j.dump() << "\n";
    }
}

std::vector<TrainingExample> load_corpus(std::istream& in) {
    std::vector<TrainingExample> corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw std::runtime_error("malformed corpus line " + std::to_string(line_no));
        }
        corpus.push_back({j.value("question_id", std::string{}),
                          j.value("prompt", std::string{}),
                          j.value("completion", std::string{})});
    }
    return corpus;
}

void write_plan_cache_entry(std::ostream& out, const std::string& question_id,
                            const Plan& plan) {
    json j;
    j["question_id"] = question_id;
    j["seeds"] = plan.seeds;
    j["paths"] = json::array();
    j["scores"] = json::array();
    for (const auto& sp : plan.paths) {
        j["paths"].push_back(sp.path.hops);
        j["scores"].push_back(sp.score);
    }
    out << j.dump() << "\n";
}

std::vector<std::pair<std::string, Plan>> load_plan_cache(std::istream& in) {
    std::vector<std::pair<std::string, Plan>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw std::runtime_error("malformed plan cache line " +
                                     std::to_string(line_no));
        }
        Plan plan;
        plan.seeds = j.value("seeds", std::vector<std::string>{});
        auto paths = j.value("paths", std::vector<std::vector<std::string>>{});
        auto scores = j.value("scores", std::vector<double>{});
        for (std::size_t i = 0; i < paths.size(); ++i) {
            double score = i < scores.size() ? scores[i] : 0.0;
            plan.paths.push_back({RelationPath(paths[i]), score});
        }
        out.emplace_back(j.value("question_id", std::string{}), std::move(plan));
    }
    return out;
}

Plan plan_from_target(const PlanTarget& target) {
    Plan plan;
    plan.seeds = target.seeds;
    const double w = target.weight();
    for (const auto& z : target.paths) plan.paths.push_back({z, w});
    return plan;
}

// ---- batch target extraction ----

namespace {

std::optional<PlanExample> extract_one(const Matcher& matcher, const GoldQuestion& gq,
                                       std::size_t max_len, std::size_t k) {
    MatchResult match = matcher.hybrid(gq.question, k);
    if (match.empty()) return std::nullopt;
    std::vector<std::string> gold;
    for (const auto& id : gq.gold) {
        if (matcher.graph().find(id)) gold.push_back(id);
    }
    if (gold.empty()) return std::nullopt;
    PlanExample ex;
    ex.question = gq.question;
    ex.target = target_distribution(gq.question, gold, matcher.graph(), match.ids(),
                                    max_len);
    return ex;
}

}  // namespace

std::vector<PlanExample> build_targets_serial(const Matcher& matcher,
                                              const std::vector<GoldQuestion>& questions,
                                              std::size_t max_len, std::size_t k) {
    std::vector<PlanExample> out;
    out.reserve(questions.size());
    for (const auto& gq : questions) {
        if (auto ex = extract_one(matcher, gq, max_len, k)) {
            out.push_back(std::move(*ex));
        }
    }
    return out;
}

std::vector<PlanExample> build_targets_parallel(const Matcher& matcher,
                                                const std::vector<GoldQuestion>& questions,
                                                std::size_t max_len, std::size_t k) {
    std::vector<std::optional<PlanExample>> slots(questions.size());
    const std::int64_t n = static_cast<std::int64_t>(questions.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
        slots[static_cast<std::size_t>(i)] =
            extract_one(matcher, questions[static_cast<std::size_t>(i)], max_len, k);
    }
    std::vector<PlanExample> out;
    out.reserve(questions.size());
    for (auto& slot : slots) {
        if (slot) out.push_back(std::move(*slot));
    }
    return out;
}

std::vector<PlanExample> build_targets(const Matcher& matcher,
                                       const std::vector<GoldQuestion>& questions,
                                       std::size_t max_len, std::size_t k) {
    if (questions.size() >= 16) {
        return build_targets_parallel(matcher, questions, max_len, k);
    }
    return build_targets_serial(matcher, questions, max_len, k);
}

// ---- frequency path model ----

FrequencyPathModel::FrequencyPathModel(const SemiStructuredGraph& graph,
                                       double epsilon, std::size_t max_len)
    : graph_(&graph),
      matcher_(std::make_shared<Matcher>(graph)),
      epsilon_(epsilon),
      max_len_(max_len) {
    rebuild_vocab();
}

void FrequencyPathModel::rebuild_vocab() {
    relation_tokens_.clear();
    for (const auto& r : graph_->relations()) {
        relation_tokens_.push_back(r);
        relation_tokens_.push_back(inverse_label(r));
    }
    for (const auto& t : extra_tokens_) relation_tokens_.push_back(t);
    std::sort(relation_tokens_.begin(), relation_tokens_.end());
    relation_tokens_.erase(
        std::unique(relation_tokens_.begin(), relation_tokens_.end()),
        relation_tokens_.end());
}

std::vector<std::string> FrequencyPathModel::features(const Question& q) const {
    std::set<std::string> feats;
    feats.insert("*");
    for (const auto& hit : matcher_->keyword(q).nodes) {
        if (auto idx = graph_->find(hit.node_id)) {
            feats.insert("t:" + graph_->node(*idx).type);
        }
    }
    for (const auto& tok : tokenize_normalized(q.text)) {
        feats.insert("b:" + std::to_string(fnv1a64(tok) % 8));
    }
    return {feats.begin(), feats.end()};
}

std::vector<std::string> FrequencyPathModel::valid_next(
    const std::vector<std::string>& prefix) const {
    std::vector<std::string> valid;
    if (prefix.empty()) {
        valid = relation_tokens_;
        valid.push_back(std::string(kTextLabel));
        return valid;  // length >= 1: no stop before the first hop
    }
    if (prefix.size() == 1 && prefix[0] == kTextLabel) return {kStopToken};
    if (prefix.size() >= max_len_) return {kStopToken};
    valid = relation_tokens_;
    valid.push_back(kStopToken);
    return valid;
}

double FrequencyPathModel::step_log_prob(const std::vector<std::string>& feats,
                                         const std::string& prev,
                                         const std::string& token,
                                         const std::vector<std::string>& valid) const {
    if (std::find(valid.begin(), valid.end(), token) == valid.end()) return kNegInf;
    double num = epsilon_;
    double den = epsilon_ * static_cast<double>(valid.size());
    for (const auto& f : feats) {
        auto fit = counts_.find(f);
        if (fit == counts_.end()) continue;
        auto pit = fit->second.find(prev);
        if (pit == fit->second.end()) continue;
        for (const auto& v : valid) {
            auto nit = pit->second.find(v);
            if (nit == pit->second.end()) continue;
            den += nit->second;
            if (v == token) num += nit->second;
        }
    }
    return std::log(num / den);
}

double FrequencyPathModel::log_prob(const Question& q, const RelationPath& z) const {
    if (z.hops.empty()) return kNegInf;
    auto feats = features(q);
    std::vector<std::string> prefix;
    std::string prev = kStartToken;
    double lp = 0.0;
    for (const auto& hop : z.hops) {
        auto valid = valid_next(prefix);
        double step = step_log_prob(feats, prev, hop, valid);
        if (step == kNegInf) return kNegInf;
        lp += step;
        prefix.push_back(hop);
        prev = hop;
    }
    auto valid = valid_next(prefix);
    double stop = step_log_prob(feats, prev, kStopToken, valid);
    if (stop == kNegInf) return kNegInf;
    return lp + stop;
}

std::vector<ScoredPath> FrequencyPathModel::generate(const Question& q,
                                                     std::size_t n) const {
    auto feats = features(q);

    // Best-first over the token tree. A state's log-prob never increases when
    // extended, so terminal states pop in exact non-increasing order.
    struct State {
        double lp;
        bool terminal;
        std::vector<std::string> prefix;
    };
    auto later = [](const State& a, const State& b) {
        if (a.lp != b.lp) return a.lp < b.lp;  // max-heap on log-prob
        if (a.terminal != b.terminal) return !a.terminal;
        return a.prefix > b.prefix;  // lexicographic tie-break
    };
    std::vector<State> heap;
    heap.push_back({0.0, false, {}});

    std::vector<ScoredPath> out;
    std::size_t expansions = 0;
    constexpr std::size_t kMaxExpansions = 20000;
    while (!heap.empty() && out.size() < n && expansions < kMaxExpansions) {
        std::pop_heap(heap.begin(), heap.end(), later);
        State s = std::move(heap.back());
        heap.pop_back();
        ++expansions;
        if (s.terminal) {
            out.push_back({RelationPath(std::move(s.prefix)), std::exp(s.lp)});
            continue;
        }
        const std::string prev = s.prefix.empty() ? kStartToken : s.prefix.back();
        auto valid = valid_next(s.prefix);
        for (const auto& token : valid) {
            double lp = s.lp + step_log_prob(feats, prev, token, valid);
            if (lp == kNegInf) continue;
            State child{lp, token == kStopToken, s.prefix};
            if (!child.terminal) child.prefix.push_back(token);
            heap.push_back(std::move(child));
            std::push_heap(heap.begin(), heap.end(), later);
        }
    }
    return out;
}

void FrequencyPathModel::add_observation(const Question& q, const RelationPath& z) {
    auto feats = features(q);
    std::string prev = kStartToken;
    std::vector<std::string> tokens = z.hops;
    tokens.push_back(kStopToken);
    for (const auto& token : tokens) {
        for (const auto& f : feats) counts_[f][prev][token] += 1.0;
        if (token != kStopToken &&
            std::find(relation_tokens_.begin(), relation_tokens_.end(), token) ==
                relation_tokens_.end() &&
            token != kTextLabel) {
            extra_tokens_.push_back(token);
        }
        prev = token;
    }
}

FrequencyPathModel FrequencyPathModel::fit(const std::vector<TrainingExample>& corpus,
                                           const SemiStructuredGraph& graph,
                                           double epsilon, std::size_t max_len) {
    if (corpus.empty()) {
        throw std::invalid_argument("fit_frequency_model: empty corpus");
    }
    FrequencyPathModel model(graph, epsilon, max_len);
    std::size_t used = 0;
    for (const auto& ex : corpus) {
        PathParse parsed = parse_path(ex.completion);
        if (!parsed.ok()) continue;
        // recover the question text from the fixed prompt template
        std::string text = ex.prompt;
        if (text.rfind(kPromptPrefix, 0) == 0) {
            text = text.substr(kPromptPrefix.size());
            if (!text.empty() && text.back() == '.') text.pop_back();
        }
        model.add_observation({ex.question_id, text}, *parsed.path);
        model.max_len_ = std::max(model.max_len_, parsed.path->length());
        ++used;
    }
    if (used == 0) {
        throw std::invalid_argument("fit_frequency_model: no parseable completions");
    }
    model.rebuild_vocab();
    return model;
}

FrequencyPathModel FrequencyPathModel::uniform(const SemiStructuredGraph& graph,
                                               double epsilon, std::size_t max_len) {
    return FrequencyPathModel(graph, epsilon, max_len);
}

void FrequencyPathModel::save(std::ostream& out) const {
    json j;
    j["epsilon"] = epsilon_;
    j["max_len"] = max_len_;
    j["extra_tokens"] = extra_tokens_;
    json counts = json::object();
    for (const auto& [feat, prevs] : counts_) {
        json jp = json::object();
        for (const auto& [prev, nexts] : prevs) {
            json jn = json::object();
            for (const auto& [next, c] : nexts) jn[next] = c;
            jp[prev] = std::move(jn);
        }
        counts[feat] = std::move(jp);
    }
    j["counts"] = std::move(counts);
    out << j.dump() << "\n";
}

FrequencyPathModel FrequencyPathModel::load(std::istream& in,
                                            const SemiStructuredGraph& graph) {
    json j;
    in >> j;
    FrequencyPathModel model(graph, j.value("epsilon", 0.01),
                             j.value("max_len", std::size_t{3}));
    model.extra_tokens_ = j.value("extra_tokens", std::vector<std::string>{});
    for (const auto& [feat, prevs] : j.value("counts", json::object()).items()) {
        for (const auto& [prev, nexts] : prevs.items()) {
            for (const auto& [next, c] : nexts.items()) {
                model.counts_[feat][prev][next] = c.get<double>();
            }
        }
    }
    model.rebuild_vocab();
    return model;
}

// ---- in-context generation ----

std::string build_path_prompt(
    const std::string& question_text,
    const std::vector<std::pair<std::string, RelationPath>>& shots) {
    if (shots.empty()) return corpus_prompt(question_text);
    std::ostringstream out;
    out << "Please generate a valid relation path that can be helpful for "
           "answering the following question. Examples are listed below:\n";
    for (std::size_t i = 0; i < shots.size(); ++i) {
        out << "<Question " << (i + 1) << "> " << shots[i].first << ": "
            << serialize_path(shots[i].second) << "\n";
    }
    out << "<Question> " << question_text << ":";
    return out.str();
}

LlmPathResult llm_generate_paths(
    const Question& q, Backend& backend, const std::vector<std::string>& schema,
    const std::vector<std::pair<std::string, RelationPath>>& shots,
    const std::string& model_label) {
    ChatRequest req;
    req.model = model_label;
    req.messages.push_back({"user", build_path_prompt(q.text, shots)});
    Completion completion = backend.complete(req);

    LlmPathResult result;
    result.raw = completion.text;

    std::set<std::string> valid_hops;
    for (const auto& r : schema) {
        valid_hops.insert(r);
        valid_hops.insert(inverse_label(r));
    }
    valid_hops.insert(std::string(kTextLabel));

    std::vector<RelationPath> seen;
    std::size_t cursor = 0;
    bool any_marker = false;
    while (true) {
        std::size_t open = completion.text.find(kPathOpen, cursor);
        if (open == std::string::npos) break;
        any_marker = true;
        std::size_t close = completion.text.find(kPathClose, open);
        if (close == std::string::npos) {
            result.diagnostics.push_back("unterminated path at offset " +
                                         std::to_string(open));
            break;
        }
        std::size_t end = close + kPathClose.size();
        PathParse parsed = parse_path(completion.text.substr(open, end - open));
        if (!parsed.ok()) {
            result.diagnostics.push_back("unparseable path at offset " +
                                         std::to_string(open) + ": " + parsed.error);
        } else {
            bool ok = true;
            if (!schema.empty()) {
                for (const auto& hop : parsed.path->hops) {
                    if (!valid_hops.count(hop)) {
                        result.diagnostics.push_back("unknown relation '" + hop +
                                                     "' at offset " +
                                                     std::to_string(open));
                        ok = false;
                        break;
                    }
                }
            }
            if (ok && std::find(seen.begin(), seen.end(), *parsed.path) == seen.end()) {
                seen.push_back(*parsed.path);
            }
        }
        cursor = end;
    }
    if (!any_marker) {
        result.diagnostics.push_back("no relation path markers in completion");
    }
    const double score = seen.empty() ? 0.0 : 1.0 / static_cast<double>(seen.size());
    for (auto& z : seen) result.paths.push_back({std::move(z), score});
    return result;
}

}  // namespace semiqa
