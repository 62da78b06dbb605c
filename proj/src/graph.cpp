#include "semiqa/graph.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace semiqa {

using nlohmann::json;

bool RelationPath::contains_text() const {
    return std::find(hops.begin(), hops.end(), kTextLabel) != hops.end();
}

RelationPath text_path() { return RelationPath({std::string(kTextLabel)}); }

std::optional<NodeIndex> SemiStructuredGraph::find(const std::string& id) const {
    auto it = id_to_index_.find(id);
    if (it == id_to_index_.end()) return std::nullopt;
    return it->second;
}

NodeIndex SemiStructuredGraph::require(const std::string& id) const {
    auto idx = find(id);
    if (!idx) throw UnknownNodeError(id);
    return *idx;
}

std::optional<RelationIndex> SemiStructuredGraph::find_relation(
    const std::string& label) const {
    auto it = relation_to_index_.find(label);
    if (it == relation_to_index_.end()) return std::nullopt;
    return it->second;
}

std::vector<Triplet> SemiStructuredGraph::neighbors(
    const std::string& id, const std::optional<std::string>& relation,
    Direction dir) const {
    NodeIndex n = require(id);
    std::optional<RelationIndex> rel;
    if (relation) {
        rel = find_relation(*relation);
        if (!rel) return {};  // relation never stored, nothing can match
    }
    std::vector<Triplet> out;
    if (dir == Direction::out || dir == Direction::both) {
        for (const Arc& a : out_adj_[n]) {
            if (rel && a.rel != *rel) continue;
            out.push_back({nodes_[n].id, relations_[a.rel], nodes_[a.other].id});
        }
    }
    if (dir == Direction::in || dir == Direction::both) {
        for (const Arc& a : in_adj_[n]) {
            if (rel && a.rel != *rel) continue;
            out.push_back({nodes_[a.other].id, relations_[a.rel], nodes_[n].id});
        }
    }
    return out;
}

void SemiStructuredGraph::expand_frontier(const std::vector<NodeIndex>& frontier,
                                          std::string_view hop_label,
                                          std::vector<NodeIndex>& next) const {
    bool inverse = false;
    std::string_view base = hop_label;
    if (is_inverse_label(hop_label) &&
        relation_to_index_.count(std::string(strip_inverse(hop_label)))) {
        inverse = true;
        base = strip_inverse(hop_label);
    }
    auto relIt = relation_to_index_.find(std::string(base));
    if (relIt == relation_to_index_.end()) return;
    RelationIndex rel = relIt->second;
    const auto& adj = inverse ? in_adj_ : out_adj_;
    for (NodeIndex n : frontier) {
        for (const Arc& a : adj[n]) {
            if (a.rel == rel) next.push_back(a.other);
        }
    }
}

namespace {

std::vector<NodeIndex> dedup_sorted(std::vector<NodeIndex> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

void check_no_text(const RelationPath& path) {
    if (path.contains_text()) {
        throw std::invalid_argument(
            "relation path contains a text hop; use text retrieval instead");
    }
}

}  // namespace

std::vector<NodeIndex> SemiStructuredGraph::reachable_serial(
    std::span<const NodeIndex> seeds, const RelationPath& path) const {
    check_no_text(path);
    std::vector<NodeIndex> frontier = dedup_sorted({seeds.begin(), seeds.end()});
    for (const std::string& hop : path.hops) {
        std::vector<NodeIndex> next;
        expand_frontier(frontier, hop, next);
        frontier = dedup_sorted(std::move(next));
        if (frontier.empty()) break;
    }
    return frontier;
}

std::vector<NodeIndex> SemiStructuredGraph::reachable_parallel(
    std::span<const NodeIndex> seeds, const RelationPath& path) const {
    check_no_text(path);
    std::vector<NodeIndex> frontier = dedup_sorted({seeds.begin(), seeds.end()});
    std::vector<std::atomic<std::uint8_t>> mark(nodes_.size());
    for (const std::string& hop : path.hops) {
        if (frontier.empty()) break;
        bool inverse = false;
        std::string_view base = hop;
        if (is_inverse_label(hop) &&
            relation_to_index_.count(std::string(strip_inverse(hop)))) {
            inverse = true;
            base = strip_inverse(hop);
        }
        auto relIt = relation_to_index_.find(std::string(base));
        if (relIt == relation_to_index_.end()) {
            frontier.clear();
            break;
        }
        RelationIndex rel = relIt->second;
        const auto& adj = inverse ? in_adj_ : out_adj_;
        for (auto& m : mark) m.store(0, std::memory_order_relaxed);
        const std::int64_t n = static_cast<std::int64_t>(frontier.size());
#pragma omp parallel for schedule(dynamic, 64)
        for (std::int64_t i = 0; i < n; ++i) {
            for (const Arc& a : adj[frontier[static_cast<std::size_t>(i)]]) {
                if (a.rel == rel) mark[a.other].store(1, std::memory_order_relaxed);
            }
        }
        std::vector<NodeIndex> next;
        for (NodeIndex v = 0; v < mark.size(); ++v) {
            if (mark[v].load(std::memory_order_relaxed)) next.push_back(v);
        }
        frontier = std::move(next);
    }
    return frontier;
}

std::vector<NodeIndex> SemiStructuredGraph::reachable(
    std::span<const NodeIndex> seeds, const RelationPath& path) const {
    // parallel expansion only pays off on wide frontiers
    if (seeds.size() >= 2048) return reachable_parallel(seeds, path);
    return reachable_serial(seeds, path);
}

std::vector<std::string> SemiStructuredGraph::reachable_set(
    const std::vector<std::string>& seeds, const RelationPath& path) const {
    std::vector<NodeIndex> idx;
    idx.reserve(seeds.size());
    for (const auto& s : seeds) idx.push_back(require(s));
    std::vector<std::string> out;
    for (NodeIndex n : reachable(idx, path)) out.push_back(nodes_[n].id);
    return out;
}

std::vector<RelationPath> SemiStructuredGraph::shortest_relation_paths(
    const std::vector<std::string>& seeds, const std::string& target,
    std::size_t max_len) const {
    NodeIndex target_idx = require(target);
    std::vector<NodeIndex> seed_idx;
    seed_idx.reserve(seeds.size());
    for (const auto& s : seeds) seed_idx.push_back(require(s));
    if (std::find(seed_idx.begin(), seed_idx.end(), target_idx) != seed_idx.end()) {
        return {};  // answer already in hand, no informative path
    }

    // Hop token: relation index, high bit = inverse traversal.
    constexpr std::uint64_t kInvBit = 1ULL << 63;
    auto hop_label = [&](std::uint64_t tok) {
        const std::string& base = relations_[static_cast<RelationIndex>(tok & ~kInvBit)];
        return (tok & kInvBit) ? inverse_label(base) : base;
    };

    std::map<std::vector<std::uint64_t>, std::vector<NodeIndex>> level;
    level.emplace(std::vector<std::uint64_t>{}, dedup_sorted(std::move(seed_idx)));

    for (std::size_t len = 1; len <= max_len && !level.empty(); ++len) {
        std::map<std::vector<std::uint64_t>, std::vector<NodeIndex>> next;
        for (const auto& [prefix, frontier] : level) {
            // group expansions by hop token so each sequence is expanded once
            std::map<std::uint64_t, std::vector<NodeIndex>> by_tok;
            for (NodeIndex n : frontier) {
                for (const Arc& a : out_adj_[n]) by_tok[a.rel].push_back(a.other);
                for (const Arc& a : in_adj_[n]) by_tok[a.rel | kInvBit].push_back(a.other);
            }
            for (auto& [tok, reached] : by_tok) {
                auto key = prefix;
                key.push_back(tok);
                auto& dst = next[std::move(key)];
                dst.insert(dst.end(), reached.begin(), reached.end());
            }
        }
        std::vector<RelationPath> found;
        for (auto& [seq, reached] : next) {
            reached = dedup_sorted(std::move(reached));
            if (std::binary_search(reached.begin(), reached.end(), target_idx)) {
                std::vector<std::string> hops;
                hops.reserve(seq.size());
                for (std::uint64_t tok : seq) hops.push_back(hop_label(tok));
                found.emplace_back(std::move(hops));
            }
        }
        if (!found.empty()) {
            std::sort(found.begin(), found.end());
            return found;
        }
        level = std::move(next);
    }
    return {};
}

GraphStats SemiStructuredGraph::stats() const {
    GraphStats s;
    s.node_count = nodes_.size();
    s.edge_count = edge_count_;
    s.node_type_count = node_types_.size();
    s.edge_type_count = relations_.size();
    if (!nodes_.empty()) {
        double d = 2.0 * static_cast<double>(edge_count_) /
                   static_cast<double>(nodes_.size());
        s.avg_degree = std::round(d * 10.0) / 10.0;
    }
    return s;
}

namespace {

json parse_line(const std::string& line, const char* which, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        std::ostringstream msg;
        msg << "malformed " << which << " line " << line_no;
        throw GraphLoadError(msg.str(), line_no);
    }
    return j;
}

std::string require_string(const json& j, const char* key, const char* which,
                           std::size_t line_no) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        std::ostringstream msg;
        msg << "malformed " << which << " line " << line_no << ": missing key '"
            << key << "'";
        throw GraphLoadError(msg.str(), line_no);
    }
    return it->get<std::string>();
}

}  // namespace

SemiStructuredGraph load_graph(std::istream& nodes_source,
                               std::istream& edges_source) {
    SemiStructuredGraph g;
    std::unordered_map<std::string, std::size_t> type_seen;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(nodes_source, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = parse_line(line, "node", line_no);
        Node node;
        node.id = require_string(j, "id", "node", line_no);
        if (node.id.empty()) {
            throw GraphLoadError("empty node id at line " + std::to_string(line_no),
                                 line_no);
        }
        node.type = j.value("type", std::string{});
        node.name = j.value("name", std::string{});
        node.text = j.value("text", std::string{});
        if (g.id_to_index_.count(node.id)) {
            throw GraphLoadError(
                "duplicate node id " + node.id + " at line " + std::to_string(line_no),
                line_no);
        }
        NodeIndex idx = static_cast<NodeIndex>(g.nodes_.size());
        g.id_to_index_.emplace(node.id, idx);
        if (!type_seen.count(node.type)) {
            type_seen.emplace(node.type, g.node_types_.size());
            g.node_types_.push_back(node.type);
        }
        g.nodes_.push_back(std::move(node));
    }
    g.out_adj_.resize(g.nodes_.size());
    g.in_adj_.resize(g.nodes_.size());

    line_no = 0;
    while (std::getline(edges_source, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = parse_line(line, "edge", line_no);
        std::string src = require_string(j, "src", "edge", line_no);
        std::string rel = require_string(j, "rel", "edge", line_no);
        std::string dst = require_string(j, "dst", "edge", line_no);
        if (rel == kTextLabel) {
            throw GraphLoadError(
                "reserved relation 'text' on edge at line " + std::to_string(line_no),
                line_no);
        }
        auto src_idx = g.find(src);
        if (!src_idx) {
            throw GraphLoadError("unknown node " + src + " at line " +
                                     std::to_string(line_no),
                                 line_no);
        }
        auto dst_idx = g.find(dst);
        if (!dst_idx) {
            throw GraphLoadError("unknown node " + dst + " at line " +
                                     std::to_string(line_no),
                                 line_no);
        }
        RelationIndex rel_idx;
        auto it = g.relation_to_index_.find(rel);
        if (it == g.relation_to_index_.end()) {
            rel_idx = static_cast<RelationIndex>(g.relations_.size());
            g.relation_to_index_.emplace(rel, rel_idx);
            g.relations_.push_back(rel);
        } else {
            rel_idx = it->second;
        }
        g.out_adj_[*src_idx].push_back({rel_idx, *dst_idx});
        g.in_adj_[*dst_idx].push_back({rel_idx, *src_idx});
        ++g.edge_count_;
    }
    return g;
}

SemiStructuredGraph load_graph_files(const std::string& nodes_path,
                                     const std::string& edges_path) {
    std::ifstream nodes(nodes_path);
    if (!nodes) throw std::runtime_error("cannot open nodes file: " + nodes_path);
    std::ifstream edges(edges_path);
    if (!edges) throw std::runtime_error("cannot open edges file: " + edges_path);
    return load_graph(nodes, edges);
}

}  // namespace semiqa
