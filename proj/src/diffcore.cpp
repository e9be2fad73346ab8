#include "hrx/diffcore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hrx::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view2d(const Array& a) { return MapC(a.data.data(), a.rows(), a.cols()); }
Map view2d(Array& a) { return Map(a.data.data(), a.rows(), a.cols()); }

void add_into(Array& dst, const Array& src) {
    if (dst.data.empty()) {
        dst = src;
        return;
    }
    for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[i] += src.data[i];
}

bool is_row_broadcast(const Array& a, const Array& b) {
    if (a.rank() != 2) return false;
    if (b.rank() == 1) return b.shape[0] == a.cols();
    return b.rank() == 2 && b.shape[0] == 1 && b.shape[1] == a.cols();
}

}  // namespace

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(element_count(shape), fill) {
    for (auto d : shape)
        if (d == 0) throw std::invalid_argument("array extents must be positive");
}

Array::Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (element_count(shape) != data.size())
        throw std::invalid_argument("array data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_string(shape));
}

Array Array::row(std::vector<double> values) {
    const auto n = values.size();
    return Array({1, n}, std::move(values));
}

std::size_t ParameterSet::add(std::string name, Array value, bool trainable) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
}

void ParameterSet::set_trainable_prefix(const std::string& prefix, bool on) {
    for (auto& e : entries_)
        if (e.name.starts_with(prefix)) e.trainable = on;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name == name) return i;
    return std::nullopt;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Constant: return "constant";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Log: return "log";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::Concat: return "concat";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::Reshape: return "reshape";
        case OpKind::Transpose: return "transpose";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::ScatterAddRows: return "scatter_add_rows";
        case OpKind::BceWithLogits: return "bce_with_logits";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// forward

const Graph::Node& Graph::node(Value v) const {
    if (v.id >= nodes_.size()) throw GraphError(v.id, "unknown node");
    return nodes_[v.id];
}

const Array& Graph::value(Value v) const {
    const Node& n = node(v);
    if (n.kind == OpKind::Parameter) return params_->value(n.param_id);
    return n.value;
}

bool Graph::any_needs_grad(std::initializer_list<Value> vs) const {
    return std::any_of(vs.begin(), vs.end(), [&](Value v) { return node(v).needs_grad; });
}

Value Graph::push(Node n) {
    const std::size_t id = nodes_.size();
    if (n.kind != OpKind::Parameter) {
        for (double x : n.value.data)
            if (!std::isfinite(x))
                throw NonFiniteError(id, std::string("non-finite value produced by ") + op_name(n.kind));
    }
    nodes_.push_back(std::move(n));
    return Value{id};
}

void Graph::check_binary_same(Value a, Value b, const char* op) const {
    if (value(a).shape != value(b).shape)
        throw ShapeError(next_id(), std::string(op) + ": shapes " + shape_string(value(a).shape) +
                                        " and " + shape_string(value(b).shape) + " differ");
}

Value Graph::constant(Array a) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(a);
    return push(std::move(n));
}

Value Graph::param(std::size_t param_id) {
    if (!params_ || param_id >= params_->size())
        throw GraphError(next_id(), "parameter id out of range");
    Node n;
    n.kind = OpKind::Parameter;
    n.param_id = param_id;
    n.needs_grad = params_->trainable(param_id);
    return push(std::move(n));
}

Value Graph::matmul(Value a, Value b) {
    const Array& x = value(a);
    const Array& y = value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows())
        throw ShapeError(next_id(), "matmul: " + shape_string(x.shape) + " x " + shape_string(y.shape));
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a.id, b.id};
    n.value = Array({x.rows(), y.cols()});
    view2d(n.value).noalias() = view2d(x) * view2d(y);
    n.needs_grad = any_needs_grad({a, b});
    return push(std::move(n));
}

Value Graph::add(Value a, Value b) {
    const Array& x = value(a);
    const Array& y = value(b);
    Node n;
    n.kind = OpKind::Add;
    n.inputs = {a.id, b.id};
    if (x.shape == y.shape) {
        n.value = x;
        for (std::size_t i = 0; i < y.size(); ++i) n.value.data[i] += y.data[i];
    } else if (is_row_broadcast(x, y)) {
        n.value = x;
        const std::size_t c = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j) n.value.data[r * c + j] += y.data[j];
        n.a = 1;
    } else {
        throw ShapeError(next_id(), "add: " + shape_string(x.shape) + " + " + shape_string(y.shape));
    }
    n.needs_grad = any_needs_grad({a, b});
    return push(std::move(n));
}

Value Graph::sub(Value a, Value b) {
    check_binary_same(a, b, "sub");
    Node n;
    n.kind = OpKind::Sub;
    n.inputs = {a.id, b.id};
    n.value = value(a);
    const Array& y = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) n.value.data[i] -= y.data[i];
    n.needs_grad = any_needs_grad({a, b});
    return push(std::move(n));
}

Value Graph::mul(Value a, Value b) {
    check_binary_same(a, b, "mul");
    Node n;
    n.kind = OpKind::Mul;
    n.inputs = {a.id, b.id};
    n.value = value(a);
    const Array& y = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) n.value.data[i] *= y.data[i];
    n.needs_grad = any_needs_grad({a, b});
    return push(std::move(n));
}

Value Graph::scale(Value a, double factor) {
    Node n;
    n.kind = OpKind::Scale;
    n.inputs = {a.id};
    n.scalar = factor;
    n.value = value(a);
    for (double& v : n.value.data) v *= factor;
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::relu(Value a) {
    Node n;
    n.kind = OpKind::Relu;
    n.inputs = {a.id};
    n.value = value(a);
    for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::sigmoid(Value a) {
    Node n;
    n.kind = OpKind::Sigmoid;
    n.inputs = {a.id};
    n.value = value(a);
    for (double& v : n.value.data) {
        // split on sign so exp never overflows
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::log(Value a) {
    Node n;
    n.kind = OpKind::Log;
    n.inputs = {a.id};
    n.value = value(a);
    for (double& v : n.value.data) v = std::log(v);
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::softmax(Value a) {
    Node n;
    n.kind = OpKind::Softmax;
    n.inputs = {a.id};
    n.value = value(a);
    const std::size_t c = n.value.shape.back();
    const std::size_t r = n.value.size() / c;
    for (std::size_t i = 0; i < r; ++i) {
        double* row = n.value.data.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= s;
    }
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::layer_norm(Value a, Value gain, Value bias, double eps) {
    const Array& x = value(a);
    const std::size_t c = x.shape.back();
    if (value(gain).size() != c || value(bias).size() != c)
        throw ShapeError(next_id(), "layer_norm: gain/bias must have " + std::to_string(c) + " entries");
    const std::size_t r = x.size() / c;
    Node n;
    n.kind = OpKind::LayerNorm;
    n.inputs = {a.id, gain.id, bias.id};
    n.scalar = eps;
    n.value = Array(x.shape);
    // aux holds the normalized input followed by one reciprocal std per row
    n.aux = Array({x.size() + r});
    const auto& g = value(gain).data;
    const auto& b = value(bias).data;
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.data.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        const double rstd = 1.0 / std::sqrt(var + eps);
        n.aux.data[x.size() + i] = rstd;
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (row[j] - mu) * rstd;
            n.aux.data[i * c + j] = xh;
            n.value.data[i * c + j] = xh * g[j] + b[j];
        }
    }
    n.needs_grad = any_needs_grad({a, gain, bias});
    return push(std::move(n));
}

Value Graph::concat(std::span<const Value> parts) {
    if (parts.empty()) throw ShapeError(next_id(), "concat: no inputs");
    const std::size_t r = value(parts[0]).rows();
    std::size_t total = 0;
    for (Value p : parts) {
        const Array& x = value(p);
        if (x.rank() != 2 || x.rows() != r)
            throw ShapeError(next_id(), "concat: input " + shape_string(x.shape) + " incompatible");
        total += x.cols();
    }
    Node n;
    n.kind = OpKind::Concat;
    n.value = Array({r, total});
    std::size_t off = 0;
    for (Value p : parts) {
        const Array& x = value(p);
        const std::size_t c = x.cols();
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(x.data.data() + i * c, c, n.value.data.data() + i * total + off);
        off += c;
        n.inputs.push_back(p.id);
        n.needs_grad = n.needs_grad || node(p).needs_grad;
    }
    return push(std::move(n));
}

Value Graph::concat_rows(std::span<const Value> parts) {
    if (parts.empty()) throw ShapeError(next_id(), "concat_rows: no inputs");
    const std::size_t c = value(parts[0]).cols();
    std::size_t total = 0;
    for (Value p : parts) {
        const Array& x = value(p);
        if (x.rank() != 2 || x.cols() != c)
            throw ShapeError(next_id(), "concat_rows: input " + shape_string(x.shape) + " incompatible");
        total += x.rows();
    }
    Node n;
    n.kind = OpKind::ConcatRows;
    n.value = Array({total, c});
    auto dst = n.value.data.begin();
    for (Value p : parts) {
        const Array& x = value(p);
        dst = std::copy(x.data.begin(), x.data.end(), dst);
        n.inputs.push_back(p.id);
        n.needs_grad = n.needs_grad || node(p).needs_grad;
    }
    return push(std::move(n));
}

Value Graph::sum(Value a) {
    Node n;
    n.kind = OpKind::Sum;
    n.inputs = {a.id};
    const auto& d = value(a).data;
    n.value = Array::scalar(std::accumulate(d.begin(), d.end(), 0.0));
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::mean(Value a) {
    Node n;
    n.kind = OpKind::Mean;
    n.inputs = {a.id};
    const auto& d = value(a).data;
    n.value = Array::scalar(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()));
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::slice_cols(Value a, std::size_t begin, std::size_t end) {
    const Array& x = value(a);
    if (x.rank() != 2 || begin >= end || end > x.cols())
        throw ShapeError(next_id(), "slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                                        ") of " + shape_string(x.shape));
    Node n;
    n.kind = OpKind::SliceCols;
    n.inputs = {a.id};
    n.a = begin;
    n.b = end;
    const std::size_t w = end - begin;
    n.value = Array({x.rows(), w});
    for (std::size_t i = 0; i < x.rows(); ++i)
        std::copy_n(x.data.data() + i * x.cols() + begin, w, n.value.data.data() + i * w);
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::slice_rows(Value a, std::size_t begin, std::size_t end) {
    const Array& x = value(a);
    if (x.rank() != 2 || begin >= end || end > x.rows())
        throw ShapeError(next_id(), "slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                                        ") of " + shape_string(x.shape));
    Node n;
    n.kind = OpKind::SliceRows;
    n.inputs = {a.id};
    n.a = begin;
    n.b = end;
    const std::size_t c = x.cols();
    n.value = Array({end - begin, c});
    std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(begin * c),
              x.data.begin() + static_cast<std::ptrdiff_t>(end * c), n.value.data.begin());
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::reshape(Value a, Shape shape) {
    const Array& x = value(a);
    if (element_count(shape) != x.size())
        throw ShapeError(next_id(), "reshape: " + shape_string(x.shape) + " -> " + shape_string(shape));
    Node n;
    n.kind = OpKind::Reshape;
    n.inputs = {a.id};
    n.value = Array(std::move(shape), x.data);
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::transpose(Value a) {
    const Array& x = value(a);
    if (x.rank() != 2) throw ShapeError(next_id(), "transpose: rank " + std::to_string(x.rank()));
    Node n;
    n.kind = OpKind::Transpose;
    n.inputs = {a.id};
    n.value = Array({x.cols(), x.rows()});
    view2d(n.value) = view2d(x).transpose();
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::gather_rows(Value a, std::span<const std::uint32_t> index) {
    const Array& x = value(a);
    if (x.rank() != 2 || index.empty()) throw ShapeError(next_id(), "gather_rows: bad input");
    const std::size_t c = x.cols();
    Node n;
    n.kind = OpKind::GatherRows;
    n.inputs = {a.id};
    n.index.assign(index.begin(), index.end());
    n.value = Array({index.size(), c});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= x.rows()) throw ShapeError(next_id(), "gather_rows: index out of range");
        std::copy_n(x.data.data() + index[i] * c, c, n.value.data.data() + i * c);
    }
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::scatter_add_rows(Value a, std::span<const std::uint32_t> index, std::size_t out_rows) {
    const Array& x = value(a);
    if (x.rank() != 2 || index.size() != x.rows() || out_rows == 0)
        throw ShapeError(next_id(), "scatter_add_rows: index length must equal row count");
    const std::size_t c = x.cols();
    Node n;
    n.kind = OpKind::ScatterAddRows;
    n.inputs = {a.id};
    n.index.assign(index.begin(), index.end());
    n.value = Array({out_rows, c});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= out_rows) throw ShapeError(next_id(), "scatter_add_rows: index out of range");
        double* dst = n.value.data.data() + index[i] * c;
        const double* src = x.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    n.needs_grad = any_needs_grad({a});
    return push(std::move(n));
}

Value Graph::bce_with_logits(Value logits, const Array& targets) {
    const Array& z = value(logits);
    if (z.size() != targets.size())
        throw ShapeError(next_id(), "bce_with_logits: " + std::to_string(z.size()) + " logits vs " +
                                        std::to_string(targets.size()) + " targets");
    Node n;
    n.kind = OpKind::BceWithLogits;
    n.inputs = {logits.id};
    n.aux = targets;
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = z.data[i];
        acc += std::max(v, 0.0) - v * targets.data[i] + std::log1p(std::exp(-std::abs(v)));
    }
    n.value = Array::scalar(acc / static_cast<double>(z.size()));
    n.needs_grad = any_needs_grad({logits});
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

Gradients Graph::backward(Value root) const {
    const Node& r = node(root);
    if (value(root).size() != 1) throw ShapeError(root.id, "backward: root is not a scalar");

    Gradients out;
    if (params_) {
        out.reserve(params_->size());
        for (std::size_t i = 0; i < params_->size(); ++i) out.emplace_back(params_->value(i).shape);
    }
    if (!r.needs_grad) return out;

    std::vector<Array> g(root.id + 1);
    g[root.id] = Array(value(root).shape, 1.0);

    auto accumulate = [&](std::size_t id, Array&& contrib) {
        if (!nodes_[id].needs_grad) return;
        if (g[id].data.empty())
            g[id] = std::move(contrib);
        else
            add_into(g[id], contrib);
    };

    for (std::size_t id = root.id + 1; id-- > 0;) {
        if (g[id].data.empty()) continue;
        const Node& n = nodes_[id];
        const Array& dy = g[id];
        switch (n.kind) {
            case OpKind::Constant:
                break;
            case OpKind::Parameter:
                add_into(out[n.param_id], dy);
                break;
            case OpKind::MatMul: {
                const Array& x = value(Value{n.inputs[0]});
                const Array& y = value(Value{n.inputs[1]});
                if (nodes_[n.inputs[0]].needs_grad) {
                    Array dx(x.shape);
                    view2d(dx).noalias() = view2d(dy) * view2d(y).transpose();
                    accumulate(n.inputs[0], std::move(dx));
                }
                if (nodes_[n.inputs[1]].needs_grad) {
                    Array dw(y.shape);
                    view2d(dw).noalias() = view2d(x).transpose() * view2d(dy);
                    accumulate(n.inputs[1], std::move(dw));
                }
                break;
            }
            case OpKind::Add: {
                accumulate(n.inputs[0], Array(dy));
                if (nodes_[n.inputs[1]].needs_grad) {
                    const Array& y = value(Value{n.inputs[1]});
                    if (n.a == 0) {
                        accumulate(n.inputs[1], Array(dy));
                    } else {
                        Array db(y.shape);
                        const std::size_t c = dy.cols();
                        for (std::size_t i = 0; i < dy.rows(); ++i)
                            for (std::size_t j = 0; j < c; ++j) db.data[j] += dy.data[i * c + j];
                        accumulate(n.inputs[1], std::move(db));
                    }
                }
                break;
            }
            case OpKind::Sub: {
                accumulate(n.inputs[0], Array(dy));
                Array neg = dy;
                for (double& v : neg.data) v = -v;
                accumulate(n.inputs[1], std::move(neg));
                break;
            }
            case OpKind::Mul: {
                const Array& x = value(Value{n.inputs[0]});
                const Array& y = value(Value{n.inputs[1]});
                if (nodes_[n.inputs[0]].needs_grad) {
                    Array dx = dy;
                    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= y.data[i];
                    accumulate(n.inputs[0], std::move(dx));
                }
                if (nodes_[n.inputs[1]].needs_grad) {
                    Array dw = dy;
                    for (std::size_t i = 0; i < dw.size(); ++i) dw.data[i] *= x.data[i];
                    accumulate(n.inputs[1], std::move(dw));
                }
                break;
            }
            case OpKind::Scale: {
                Array dx = dy;
                for (double& v : dx.data) v *= n.scalar;
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::Relu: {
                Array dx = dy;
                for (std::size_t i = 0; i < dx.size(); ++i)
                    if (n.value.data[i] <= 0.0) dx.data[i] = 0.0;
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::Sigmoid: {
                Array dx = dy;
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    const double s = n.value.data[i];
                    dx.data[i] *= s * (1.0 - s);
                }
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::Log: {
                const Array& x = value(Value{n.inputs[0]});
                Array dx = dy;
                for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] /= x.data[i];
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::Softmax: {
                const std::size_t c = n.value.shape.back();
                const std::size_t rows = n.value.size() / c;
                Array dx(n.value.shape);
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* s = n.value.data.data() + i * c;
                    const double* d = dy.data.data() + i * c;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += s[j] * d[j];
                    for (std::size_t j = 0; j < c; ++j) dx.data[i * c + j] = s[j] * (d[j] - dot);
                }
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::LayerNorm: {
                const Array& gain = value(Value{n.inputs[1]});
                const std::size_t c = gain.size();
                const std::size_t rows = n.value.size() / c;
                const double inv_c = 1.0 / static_cast<double>(c);
                Array dgain(gain.shape);
                Array dbias(value(Value{n.inputs[2]}).shape);
                Array dx(n.value.shape);
                std::vector<double> dxh(c);
                for (std::size_t i = 0; i < rows; ++i) {
                    const double* xh = n.aux.data.data() + i * c;
                    const double* d = dy.data.data() + i * c;
                    const double rstd = n.aux.data[n.value.size() + i];
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        dgain.data[j] += d[j] * xh[j];
                        dbias.data[j] += d[j];
                        dxh[j] = d[j] * gain.data[j];
                        m1 += dxh[j];
                        m2 += dxh[j] * xh[j];
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    for (std::size_t j = 0; j < c; ++j)
                        dx.data[i * c + j] = rstd * (dxh[j] - m1 - xh[j] * m2);
                }
                accumulate(n.inputs[0], std::move(dx));
                accumulate(n.inputs[1], std::move(dgain));
                accumulate(n.inputs[2], std::move(dbias));
                break;
            }
            case OpKind::Concat: {
                const std::size_t total = n.value.cols();
                const std::size_t rows = n.value.rows();
                std::size_t off = 0;
                for (std::size_t in : n.inputs) {
                    const std::size_t c = value(Value{in}).cols();
                    if (nodes_[in].needs_grad) {
                        Array part({rows, c});
                        for (std::size_t i = 0; i < rows; ++i)
                            std::copy_n(dy.data.data() + i * total + off, c, part.data.data() + i * c);
                        accumulate(in, std::move(part));
                    }
                    off += c;
                }
                break;
            }
            case OpKind::ConcatRows: {
                std::size_t off = 0;
                for (std::size_t in : n.inputs) {
                    const Array& x = value(Value{in});
                    if (nodes_[in].needs_grad) {
                        const auto first = dy.data.begin() + static_cast<std::ptrdiff_t>(off);
                        accumulate(in, Array(x.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(x.size()))));
                    }
                    off += x.size();
                }
                break;
            }
            case OpKind::Sum:
            case OpKind::Mean: {
                const Array& x = value(Value{n.inputs[0]});
                double v = dy.data[0];
                if (n.kind == OpKind::Mean) v /= static_cast<double>(x.size());
                accumulate(n.inputs[0], Array(x.shape, v));
                break;
            }
            case OpKind::SliceCols: {
                const Array& x = value(Value{n.inputs[0]});
                Array dx(x.shape);
                const std::size_t w = n.b - n.a;
                for (std::size_t i = 0; i < x.rows(); ++i)
                    std::copy_n(dy.data.data() + i * w, w, dx.data.data() + i * x.cols() + n.a);
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::SliceRows: {
                const Array& x = value(Value{n.inputs[0]});
                Array dx(x.shape);
                std::copy(dy.data.begin(), dy.data.end(),
                          dx.data.begin() + static_cast<std::ptrdiff_t>(n.a * x.cols()));
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::Reshape: {
                const Array& x = value(Value{n.inputs[0]});
                accumulate(n.inputs[0], Array(x.shape, dy.data));
                break;
            }
            case OpKind::Transpose: {
                Array dx({dy.cols(), dy.rows()});
                view2d(dx) = view2d(dy).transpose();
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::GatherRows: {
                const Array& x = value(Value{n.inputs[0]});
                const std::size_t c = x.cols();
                Array dx(x.shape);
                for (std::size_t i = 0; i < n.index.size(); ++i) {
                    double* dst = dx.data.data() + n.index[i] * c;
                    const double* src = dy.data.data() + i * c;
                    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                }
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::ScatterAddRows: {
                const Array& x = value(Value{n.inputs[0]});
                const std::size_t c = x.cols();
                Array dx(x.shape);
                for (std::size_t i = 0; i < n.index.size(); ++i)
                    std::copy_n(dy.data.data() + n.index[i] * c, c, dx.data.data() + i * c);
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::BceWithLogits: {
                const Array& z = value(Value{n.inputs[0]});
                Array dz(z.shape);
                const double scale = dy.data[0] / static_cast<double>(z.size());
                for (std::size_t i = 0; i < z.size(); ++i) {
                    const double v = z.data[i];
                    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                    dz.data[i] = (s - n.aux.data[i]) * scale;
                }
                accumulate(n.inputs[0], std::move(dz));
                break;
            }
        }
        g[id] = Array();
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizers

OptimizerState make_optimizer(OptimizerKind kind, const ParameterSet& params, double lr,
                              double weight_decay) {
    OptimizerState s;
    s.kind = kind;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.first_moment.emplace_back(params.value(i).shape);
        s.second_moment.emplace_back(params.value(i).shape);
    }
    return s;
}

void optimizer_step(OptimizerState& state, ParameterSet& params, const Gradients& grads) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size())
        throw std::invalid_argument("optimizer_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape != params.value(i).shape || state.first_moment[i].shape != params.value(i).shape)
            throw std::invalid_argument("optimizer_step: shape mismatch for " + params.name(i));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const bool decoupled = state.kind == OptimizerKind::AdamW && state.weight_decay != 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.trainable(i)) continue;
        auto& p = params.value(i).data;
        auto& m = state.first_moment[i].data;
        auto& v = state.second_moment[i].data;
        const auto& g = grads[i].data;
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (decoupled) p[j] -= state.lr * state.weight_decay * p[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double squared_norm(const Array& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return s;
}

}  // namespace hrx::diff
