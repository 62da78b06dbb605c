#pragma once
// Text-attributed heterogeneous graph: typed nodes carrying documents, typed
// edges, adjacency indexed in both directions. Built once from line-delimited
// JSON, immutable afterwards, safe to share across reader threads.
//
// Relation paths are sequences of edge-type labels. Two labels are special:
//   "text"     pseudo-relation marking a document-only plan; never stored.
//   "inv___R"  traverses stored relation R against edge direction.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace semiqa {

using NodeIndex = std::uint32_t;
using RelationIndex = std::uint32_t;

inline constexpr std::string_view kTextLabel = "text";
inline constexpr std::string_view kInversePrefix = "inv___";

inline bool is_inverse_label(std::string_view label) {
    return label.size() > kInversePrefix.size() &&
           label.substr(0, kInversePrefix.size()) == kInversePrefix;
}

inline std::string inverse_label(std::string_view relation) {
    return std::string(kInversePrefix) + std::string(relation);
}

inline std::string_view strip_inverse(std::string_view label) {
    return is_inverse_label(label) ? label.substr(kInversePrefix.size()) : label;
}

struct Node {
    std::string id;
    std::string type;
    std::string name;
    std::string text;
};

// Edge reported back to callers, in stored (source, relation, destination)
// orientation regardless of which endpoint was queried.
struct Triplet {
    std::string src;
    std::string rel;
    std::string dst;
    bool operator==(const Triplet&) const = default;
};

struct RelationPath {
    std::vector<std::string> hops;

    RelationPath() = default;
    explicit RelationPath(std::vector<std::string> h) : hops(std::move(h)) {}

    std::size_t length() const { return hops.size(); }
    bool is_text() const { return hops.size() == 1 && hops[0] == kTextLabel; }
    bool contains_text() const;
    auto operator<=>(const RelationPath&) const = default;
};

RelationPath text_path();

class GraphLoadError : public std::runtime_error {
public:
    GraphLoadError(const std::string& msg, std::size_t line)
        : std::runtime_error(msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class UnknownNodeError : public std::runtime_error {
public:
    explicit UnknownNodeError(const std::string& id)
        : std::runtime_error("unknown node " + id), id_(id) {}
    const std::string& id() const { return id_; }

private:
    std::string id_;
};

struct GraphStats {
    std::size_t node_count = 0;
    std::size_t edge_count = 0;
    std::size_t node_type_count = 0;
    std::size_t edge_type_count = 0;
    double avg_degree = 0.0;  // 2|E|/|V|, rounded to one decimal
    bool operator==(const GraphStats&) const = default;
};

enum class Direction { out, in, both };

class SemiStructuredGraph {
public:
    struct Arc {
        RelationIndex rel;
        NodeIndex other;
    };

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t edge_count() const { return edge_count_; }
    const Node& node(NodeIndex i) const { return nodes_[i]; }
    const std::vector<Node>& nodes() const { return nodes_; }

    std::optional<NodeIndex> find(const std::string& id) const;
    NodeIndex require(const std::string& id) const;  // throws UnknownNodeError

    const std::vector<std::string>& relations() const { return relations_; }
    const std::vector<std::string>& node_types() const { return node_types_; }
    std::optional<RelationIndex> find_relation(const std::string& label) const;
    const std::string& relation_label(RelationIndex r) const { return relations_[r]; }

    // Arcs in edge-insertion order.
    std::span<const Arc> out_arcs(NodeIndex n) const { return out_adj_[n]; }
    std::span<const Arc> in_arcs(NodeIndex n) const { return in_adj_[n]; }

    // Incident stored edges of `id`, optionally filtered by relation label.
    // Direction::both lists outgoing then incoming edges.
    std::vector<Triplet> neighbors(const std::string& id,
                                   const std::optional<std::string>& relation,
                                   Direction dir) const;

    // Nodes reachable from `seeds` by following the hop labels in order.
    // Result is sorted ascending by node index. Throws std::invalid_argument
    // on a "text" hop. Unknown relation labels reach nothing.
    std::vector<NodeIndex> reachable(std::span<const NodeIndex> seeds,
                                     const RelationPath& path) const;
    std::vector<NodeIndex> reachable_serial(std::span<const NodeIndex> seeds,
                                            const RelationPath& path) const;
    std::vector<NodeIndex> reachable_parallel(std::span<const NodeIndex> seeds,
                                              const RelationPath& path) const;

    // Id-level convenience wrapper; validates every seed.
    std::vector<std::string> reachable_set(const std::vector<std::string>& seeds,
                                           const RelationPath& path) const;

    // All distinct relation-label sequences of minimal length <= max_len for
    // which some instance path connects a seed to `target`. Searches forward
    // and inverse hops. A target that is itself a seed yields the empty set
    // (zero-length plans carry no information). Sorted lexicographically.
    std::vector<RelationPath> shortest_relation_paths(
        const std::vector<std::string>& seeds, const std::string& target,
        std::size_t max_len) const;

    GraphStats stats() const;

private:
    friend SemiStructuredGraph load_graph(std::istream&, std::istream&);

    void expand_frontier(const std::vector<NodeIndex>& frontier,
                         std::string_view hop_label,
                         std::vector<NodeIndex>& next) const;

    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeIndex> id_to_index_;
    std::vector<std::string> relations_;
    std::unordered_map<std::string, RelationIndex> relation_to_index_;
    std::vector<std::string> node_types_;
    std::vector<std::vector<Arc>> out_adj_;
    std::vector<std::vector<Arc>> in_adj_;
    std::size_t edge_count_ = 0;
};

// Nodes file: one JSON object per line, keys id/type/name/text.
// Edges file: one JSON object per line, keys src/rel/dst.
// Unknown keys are ignored; blank lines are skipped.
SemiStructuredGraph load_graph(std::istream& nodes_source, std::istream& edges_source);
SemiStructuredGraph load_graph_files(const std::string& nodes_path,
                                     const std::string& edges_path);

}  // namespace semiqa
