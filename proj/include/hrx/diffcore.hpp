#pragma once

// Dense 64-bit arrays with define-by-run reverse-mode differentiation and the
// Adam / AdamW optimizers used by the trainable receiver.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrx::diff {

using Shape = std::vector<std::size_t>;

/// Row-major array of doubles. Rank is usually 1 or 2.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s, double fill = 0.0);
    Array(Shape s, std::vector<double> values);

    static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }
    static Array row(std::vector<double> values);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
    /// Trailing extent for rank-2 arrays, 1 for rank-1.
    std::size_t cols() const { return shape.size() >= 2 ? shape[1] : 1; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const Array&) const = default;
};

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

class GraphError : public std::runtime_error {
public:
    GraphError(std::size_t node, const std::string& what)
        : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
    std::size_t node() const { return node_; }

private:
    std::size_t node_;
};

class ShapeError : public GraphError {
    using GraphError::GraphError;
};

class NonFiniteError : public GraphError {
    using GraphError::GraphError;
};

/// Named, persistent trainable arrays. Graphs reference entries by index.
class ParameterSet {
public:
    std::size_t add(std::string name, Array value, bool trainable = true);

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t id) const { return entries_.at(id).name; }
    Array& value(std::size_t id) { return entries_.at(id).value; }
    const Array& value(std::size_t id) const { return entries_.at(id).value; }
    bool trainable(std::size_t id) const { return entries_.at(id).trainable; }
    void set_trainable(std::size_t id, bool on) { entries_.at(id).trainable = on; }
    /// Marks every entry whose name starts with prefix.
    void set_trainable_prefix(const std::string& prefix, bool on);

    std::optional<std::size_t> find(const std::string& name) const;
    std::size_t scalar_count() const;

    bool operator==(const ParameterSet&) const = default;

private:
    struct Entry {
        std::string name;
        Array value;
        bool trainable = true;
        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> entries_;
};

/// One gradient array per ParameterSet entry, zero where unreachable or frozen.
using Gradients = std::vector<Array>;

enum class OpKind {
    Constant,
    Parameter,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Log,
    Softmax,
    LayerNorm,
    Concat,
    ConcatRows,
    Sum,
    Mean,
    SliceCols,
    SliceRows,
    Reshape,
    Transpose,
    GatherRows,
    ScatterAddRows,
    BceWithLogits,
};

const char* op_name(OpKind kind);

struct Value {
    std::size_t id = 0;
};

/// Define-by-run computation graph. Each op is evaluated eagerly when it is
/// recorded, so node ids are a topological order by construction.
class Graph {
public:
    explicit Graph(const ParameterSet* params = nullptr) : params_(params) {}

    Value constant(Array a);
    Value param(std::size_t param_id);

    Value matmul(Value a, Value b);
    /// Same-shape add, or b broadcast as a row ([c] or [1,c]) over a's rows.
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value scale(Value a, double factor);
    Value relu(Value a);
    Value sigmoid(Value a);
    Value log(Value a);
    /// Softmax over the last axis.
    Value softmax(Value a);
    /// Normalizes each row, then applies gain and bias rows.
    Value layer_norm(Value a, Value gain, Value bias, double eps = 1e-5);
    /// Concatenation along the last axis of rank-2 arrays with equal row counts.
    Value concat(std::span<const Value> parts);
    /// Stacks rank-2 arrays with equal column counts.
    Value concat_rows(std::span<const Value> parts);
    Value sum(Value a);
    Value mean(Value a);
    Value slice_cols(Value a, std::size_t begin, std::size_t end);
    Value slice_rows(Value a, std::size_t begin, std::size_t end);
    Value reshape(Value a, Shape shape);
    Value transpose(Value a);
    /// out[i] = a[index[i]] row-wise.
    Value gather_rows(Value a, std::span<const std::uint32_t> index);
    /// out[index[i]] += a[i]; out has out_rows rows.
    Value scatter_add_rows(Value a, std::span<const std::uint32_t> index, std::size_t out_rows);
    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
    Value bce_with_logits(Value logits, const Array& targets);

    const Array& value(Value v) const;
    OpKind kind(Value v) const { return nodes_.at(v.id).kind; }
    std::span<const std::size_t> inputs(Value v) const { return nodes_.at(v.id).inputs; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar root.
    Gradients backward(Value root) const;

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        std::vector<std::size_t> inputs;
        Array value;
        Array aux;
        std::vector<std::uint32_t> index;
        double scalar = 0.0;
        std::size_t a = 0;
        std::size_t b = 0;
        std::size_t param_id = 0;
        bool needs_grad = false;
    };

    const Node& node(Value v) const;
    Value push(Node n);
    bool any_needs_grad(std::initializer_list<Value> vs) const;
    void check_binary_same(Value a, Value b, const char* op) const;
    std::size_t next_id() const { return nodes_.size(); }

    const ParameterSet* params_;
    std::vector<Node> nodes_;
};

enum class OptimizerKind { Adam, AdamW };

/// Moment estimates and hyperparameters for one ParameterSet.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::vector<Array> first_moment;
    std::vector<Array> second_moment;

    bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_optimizer(OptimizerKind kind, const ParameterSet& params, double lr,
                              double weight_decay = 0.0);

/// One adaptive-moment update of every trainable entry. Frozen entries are
/// left untouched. AdamW first shrinks by lr * weight_decay * param.
void optimizer_step(OptimizerState& state, ParameterSet& params, const Gradients& grads);

double squared_norm(const Array& a);

}  // namespace hrx::diff
