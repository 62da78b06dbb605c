#include "semiqa/matcher.hpp"

#include "semiqa/text_norm.hpp"

#include <algorithm>
#include <map>

namespace semiqa {

std::vector<std::string> MatchResult::ids() const {
    std::vector<std::string> out;
    out.reserve(nodes.size());
    for (const auto& h : nodes) out.push_back(h.node_id);
    return out;
}

Matcher::Matcher(const SemiStructuredGraph& graph) : graph_(&graph) {
    std::map<std::string, std::vector<NodeIndex>> by_name;
    for (NodeIndex n = 0; n < graph.node_count(); ++n) {
        std::string norm = normalize_text(graph.node(n).name);
        if (norm.empty()) continue;
        by_name[norm].push_back(n);
    }
    names_.assign(by_name.begin(), by_name.end());
}

void Matcher::attach_embeddings(const EmbeddingIndex* index,
                                EmbeddingProvider* provider) {
    index_ = index;
    provider_ = provider;
}

MatchResult Matcher::keyword(const Question& q) const {
    const std::string question = normalize_text(q.text);

    struct Occurrence {
        std::size_t start;
        std::size_t len;
        std::size_t name_slot;
    };
    std::vector<Occurrence> occs;
    for (std::size_t slot = 0; slot < names_.size(); ++slot) {
        for (std::size_t pos : find_word_bounded(question, names_[slot].first)) {
            occs.push_back({pos, names_[slot].first.size(), slot});
        }
    }
    // longest match wins among overlapping spans; equal lengths coexist
    std::sort(occs.begin(), occs.end(), [&](const Occurrence& a, const Occurrence& b) {
        if (a.len != b.len) return a.len > b.len;
        if (a.start != b.start) return a.start < b.start;
        return names_[a.name_slot].first < names_[b.name_slot].first;
    });
    std::vector<Occurrence> accepted;
    for (const auto& occ : occs) {
        bool shadowed = false;
        for (const auto& acc : accepted) {
            if (acc.len <= occ.len) continue;
            bool disjoint = occ.start + occ.len <= acc.start ||
                            acc.start + acc.len <= occ.start;
            if (!disjoint) {
                shadowed = true;
                break;
            }
        }
        if (!shadowed) accepted.push_back(occ);
    }

    // order hits by first surviving occurrence, then node insertion order
    std::map<NodeIndex, std::size_t> first_pos;
    for (const auto& occ : accepted) {
        for (NodeIndex n : names_[occ.name_slot].second) {
            auto it = first_pos.find(n);
            if (it == first_pos.end() || occ.start < it->second) {
                first_pos[n] = occ.start;
            }
        }
    }
    std::vector<std::pair<std::size_t, NodeIndex>> order;
    order.reserve(first_pos.size());
    for (const auto& [n, pos] : first_pos) order.emplace_back(pos, n);
    std::sort(order.begin(), order.end());

    MatchResult result;
    result.method = MatchMethod::keyword;
    for (const auto& [pos, n] : order) {
        result.nodes.push_back({graph_->node(n).id, 1.0});
    }
    return result;
}

MatchResult Matcher::similarity(const Question& q, std::size_t k) const {
    if (!index_ || !provider_) {
        throw ProviderError("no embedding backend attached", 0);
    }
    MatchResult result;
    result.method = MatchMethod::embedding;
    if (k == 0 || graph_->node_count() == 0) return result;
    EmbeddingVector query = provider_->embed(q.text);
    for (const ScoredNode& s : index_->top_k(query, k)) {
        result.nodes.push_back(
            {graph_->node(s.node).id, std::clamp(s.score, 0.0, 1.0)});
    }
    return result;
}

MatchResult Matcher::hybrid(const Question& q, std::size_t k) const {
    MatchResult kw = keyword(q);
    if (!kw.empty()) return kw;
    if (graph_->node_count() == 0) {
        MatchResult empty;
        empty.method = MatchMethod::embedding;
        return empty;
    }
    return similarity(q, k);
}

}  // namespace semiqa
