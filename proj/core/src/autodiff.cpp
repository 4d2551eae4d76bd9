#include "ctxmeta/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "ctxmeta/error.hpp"

namespace ctxmeta::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t rows_of(const Shape& s) { return s.size() < 2 ? 1 : s[0]; }
std::size_t cols_of(const Shape& s) {
    if (s.empty()) return 1;
    return s.size() == 1 ? s[0] : s[1];
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto dim : shape) {
        if (dim == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape.size() > 2) throw DimensionError("tensors are limited to rank 2, got " + shape_str(shape));
    if (product(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                             " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->leaf = true;
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

const Node& checked(const Tensor& t) {
    if (!t.defined()) throw ContractError("operation on an undefined tensor");
    return *t.node();
}

struct Broadcast {
    std::size_t rows, cols;
    std::size_t ar, ac, br, bc;
    Shape shape;
};

Broadcast broadcast_shapes(const Tensor& a, const Tensor& b, const char* op) {
    const auto& sa = checked(a).shape;
    const auto& sb = checked(b).shape;
    Broadcast out{};
    out.ar = rows_of(sa);
    out.ac = cols_of(sa);
    out.br = rows_of(sb);
    out.bc = cols_of(sb);
    auto fit = [&](std::size_t x, std::size_t y) -> std::size_t {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sa) + " with " + shape_str(sb));
    };
    out.rows = fit(out.ar, out.br);
    out.cols = fit(out.ac, out.bc);
    if (sa == sb) {
        out.shape = sa;
    } else if (sb.size() <= sa.size() && out.rows == out.ar && out.cols == out.ac) {
        out.shape = sa;
    } else if (sa.size() <= sb.size() && out.rows == out.br && out.cols == out.bc) {
        out.shape = sb;
    } else {
        out.shape = {out.rows, out.cols};
    }
    return out;
}

/// Adds a [rows x cols] gradient into a possibly broadcast operand of shape [r x c].
void reduce_into(std::vector<double>& target, std::size_t r, std::size_t c, const std::vector<double>& g,
                 std::size_t rows, std::size_t cols, double sign = 1.0) {
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t ti = r == 1 ? 0 : i;
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t tj = c == 1 ? 0 : j;
            target[ti * c + tj] += sign * g[i * cols + j];
        }
    }
}

template <class Fn>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, Fn fn,
                          std::function<void(Node&, const Broadcast&)> back) {
    const auto bc = broadcast_shapes(a, b, name);
    const auto& da = a.node()->data;
    const auto& db = b.node()->data;
    std::vector<double> out(bc.rows * bc.cols);
    for (std::size_t i = 0; i < bc.rows; ++i) {
        const std::size_t ia = bc.ar == 1 ? 0 : i;
        const std::size_t ib = bc.br == 1 ? 0 : i;
        for (std::size_t j = 0; j < bc.cols; ++j) {
            const std::size_t ja = bc.ac == 1 ? 0 : j;
            const std::size_t jb = bc.bc == 1 ? 0 : j;
            out[i * bc.cols + j] = fn(da[ia * bc.ac + ja], db[ib * bc.bc + jb]);
        }
    }
    return make_result(bc.shape, std::move(out), {a, b},
                       [bc, back = std::move(back)](Node& self) { back(self, bc); });
}

template <class Fwd, class Deriv>
Tensor elementwise_unary(const Tensor& a, Fwd fwd, Deriv deriv) {
    const auto& src = checked(a).data;
    std::vector<double> out(src.size());
    std::transform(src.begin(), src.end(), out.begin(), fwd);
    return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
        auto& parent = *self.parents[0];
        if (!parent.requires_grad) return;
        parent.ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            parent.grad[i] += self.grad[i] * deriv(parent.data[i], self.data[i]);
        }
    });
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = product(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    if (rows.empty()) throw DimensionError("matrix needs at least one row");
    const auto cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) throw DimensionError("ragged matrix rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from({rows.size(), cols}, std::move(data), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(*this).shape; }
std::size_t Tensor::size() const { return checked(*this).data.size(); }
std::size_t Tensor::rows() const { return rows_of(shape()); }
std::size_t Tensor::cols() const { return cols_of(shape()); }
std::span<const double> Tensor::data() const { return checked(*this).data; }

std::span<double> Tensor::mutable_data() {
    checked(*this);
    if (!node_->leaf) throw ContractError("only leaf tensors may be written in place");
    return node_->data;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (r >= rows() || c >= cols()) throw IndexError("tensor index out of range");
    return node_->data[r * cols() + c];
}

bool Tensor::requires_grad() const { return checked(*this).requires_grad; }
bool Tensor::is_leaf() const { return checked(*this).leaf; }
bool Tensor::has_grad() const { return checked(*this).grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    checked(*this);
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    checked(*this);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), checked(*this).data, false); }

Tensor Tensor::clone() const { return from(shape(), checked(*this).data, requires_grad()); }

std::uint64_t Tensor::id() const { return checked(*this).id; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn) {
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor& p) { return p.node()->requires_grad; });
    auto node = new_node(std::move(shape), std::move(data), needs);
    node->leaf = false;
    if (needs) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto m = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto k = a.cols();
    const auto k2 = checked(b).shape.size() < 2 ? b.size() : b.rows();
    const auto n = b.shape().size() < 2 ? 1 : b.cols();
    if (k != k2 || (b.rank() < 2 && b.rank() != 1)) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const auto& A = a.node()->data;
    const auto& B = b.node()->data;
    std::vector<double> C(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = C.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return make_result({m, n}, std::move(C), {a, b}, [m, k, n](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& G = self.grad;
        if (pa.requires_grad) {
            pa.ensure_grad();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = pb.data.data() + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    pa.grad[i * k + p] += acc;
                }
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = pa.data[i * k + p];
                    if (aip == 0.0) continue;
                    double* bgrad = pb.grad.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) bgrad[j] += aip * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    const auto r = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto c = a.cols();
    const auto& src = a.node()->data;
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
    return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(a, b, "add", [](double x, double y) { return x + y; },
                              [](Node& self, const Broadcast& bc) {
                                  for (int side = 0; side < 2; ++side) {
                                      auto& p = *self.parents[side];
                                      if (!p.requires_grad) continue;
                                      p.ensure_grad();
                                      reduce_into(p.grad, side ? bc.br : bc.ar, side ? bc.bc : bc.ac, self.grad,
                                                  bc.rows, bc.cols);
                                  }
                              });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(a, b, "sub", [](double x, double y) { return x - y; },
                              [](Node& self, const Broadcast& bc) {
                                  for (int side = 0; side < 2; ++side) {
                                      auto& p = *self.parents[side];
                                      if (!p.requires_grad) continue;
                                      p.ensure_grad();
                                      reduce_into(p.grad, side ? bc.br : bc.ar, side ? bc.bc : bc.ac, self.grad,
                                                  bc.rows, bc.cols, side ? -1.0 : 1.0);
                                  }
                              });
}

namespace {

/// Gradient of a product/quotient-like binary op where d(out)/d(operand) is
/// a function of both operand values at the broadcast position.
template <class DA, class DB>
void binary_backward(Node& self, const Broadcast& bc, DA da_fn, DB db_fn) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t i = 0; i < bc.rows; ++i) {
        const std::size_t ia = bc.ar == 1 ? 0 : i;
        const std::size_t ib = bc.br == 1 ? 0 : i;
        for (std::size_t j = 0; j < bc.cols; ++j) {
            const std::size_t ka = ia * bc.ac + (bc.ac == 1 ? 0 : j);
            const std::size_t kb = ib * bc.bc + (bc.bc == 1 ? 0 : j);
            const double g = self.grad[i * bc.cols + j];
            const double x = pa.data[ka];
            const double y = pb.data[kb];
            if (pa.requires_grad) pa.grad[ka] += g * da_fn(x, y);
            if (pb.requires_grad) pb.grad[kb] += g * db_fn(x, y);
        }
    }
}

}  // namespace

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(a, b, "mul", [](double x, double y) { return x * y; },
                              [](Node& self, const Broadcast& bc) {
                                  binary_backward(
                                      self, bc, [](double, double y) { return y; },
                                      [](double x, double) { return x; });
                              });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : checked(b).data) {
        if (v == 0.0) throw DegenerateInputError("div: division by zero");
    }
    return elementwise_binary(a, b, "div", [](double x, double y) { return x / y; },
                              [](Node& self, const Broadcast& bc) {
                                  binary_backward(
                                      self, bc, [](double, double y) { return 1.0 / y; },
                                      [](double x, double y) { return -x / (y * y); });
                              });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
    return elementwise_unary(
        a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return elementwise_unary(
        a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    return elementwise_unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return elementwise_unary(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    return elementwise_unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double v : checked(a).data) {
        if (v <= 0.0) throw DegenerateInputError("log: non-positive argument");
    }
    return elementwise_unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(const Tensor& a) {
    const auto& src = checked(a).data;
    if (src.empty()) throw DimensionError("softmax: empty input");
    const auto r = a.rows();
    const auto c = a.cols();
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = src.data() + i * c;
        double* o = out.data() + i * c;
        const double mx = *std::max_element(in, in + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < c; ++j) o[j] /= total;
    }
    return make_result(a.shape(), std::move(out), {a}, [r, c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.data.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor log_softmax(const Tensor& a) {
    const auto& src = checked(a).data;
    if (src.empty()) throw DimensionError("log_softmax: empty input");
    const auto r = a.rows();
    const auto c = a.cols();
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < r; ++i) {
        const double* in = src.data() + i * c;
        const double mx = *std::max_element(in, in + c);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(in[j] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[j] - lse;
    }
    return make_result(a.shape(), std::move(out), {a}, [r, c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.data.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += g[j];
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += g[j] - std::exp(y[j]) * gsum;
        }
    });
}

// ---------------------------------------------------------------------------
// Structure

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const auto r = parts.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    bool all_vectors = true;
    for (const auto& p : parts) {
        if (p.rows() != r) {
            throw DimensionError("concat: row counts differ, " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        all_vectors = all_vectors && p.rank() <= 1;
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(r * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& src = parts[k].node()->data;
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(src.data() + i * widths[k], widths[k], out.data() + i * total + offset);
        offset += widths[k];
    }
    Shape shape = all_vectors ? Shape{total} : Shape{r, total};
    return make_result(std::move(shape), std::move(out), parts, [r, total, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j)
                        p.grad[i * widths[k] + j] += self.grad[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

Tensor sum(const Tensor& a) {
    const auto& src = checked(a).data;
    const double total = std::accumulate(src.begin(), src.end(), 0.0);
    return make_result({}, {total}, {a}, [](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (auto& g : p.grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_rows(const Tensor& a) {
    const auto r = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto c = a.cols();
    const auto& src = a.node()->data;
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += src[i * c + j];
    return make_result({1, c}, std::move(out), {a}, [r, c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j];
    });
}

Tensor sum_cols(const Tensor& a) {
    const auto r = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto c = a.cols();
    const auto& src = a.node()->data;
    std::vector<double> out(r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += src[i * c + j];
    return make_result({r, 1}, std::move(out), {a}, [r, c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
    const auto r = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto c = a.cols();
    if (index.empty()) throw DimensionError("gather_rows: empty index");
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<double> out(idx.size() * c);
    const auto& src = a.node()->data;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= r) throw IndexError("gather_rows: row " + std::to_string(idx[i]) + " out of range");
        std::copy_n(src.data() + idx[i] * c, c, out.data() + i * c);
    }
    const auto n = idx.size();
    return make_result({n, c}, std::move(out), {a}, [idx = std::move(idx), c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[idx[i] * c + j] += self.grad[i * c + j];
    });
}

Tensor segment_sum(const Tensor& a, std::span<const std::size_t> segment, std::size_t num_segments) {
    const auto r = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto c = a.cols();
    if (segment.size() != r) throw DimensionError("segment_sum: one segment id per row required");
    if (num_segments == 0) throw DimensionError("segment_sum: zero segments");
    std::vector<std::size_t> seg(segment.begin(), segment.end());
    std::vector<double> out(num_segments * c, 0.0);
    const auto& src = a.node()->data;
    for (std::size_t i = 0; i < r; ++i) {
        if (seg[i] >= num_segments) throw IndexError("segment_sum: segment id out of range");
        for (std::size_t j = 0; j < c; ++j) out[seg[i] * c + j] += src[i * c + j];
    }
    return make_result({num_segments, c}, std::move(out), {a}, [seg = std::move(seg), c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < seg.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[seg[i] * c + j];
    });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> column) {
    const auto r = checked(a).shape.size() < 2 ? 1 : a.rows();
    const auto c = a.cols();
    if (column.size() != r) throw DimensionError("pick: one column per row required");
    std::vector<std::size_t> col(column.begin(), column.end());
    std::vector<double> out(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (col[i] >= c) throw IndexError("pick: column out of range");
        out[i] = a.node()->data[i * c + col[i]];
    }
    return make_result({r, 1}, std::move(out), {a}, [col = std::move(col), c](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < col.size(); ++i) p.grad[i * c + col[i]] += self.grad[i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (product(shape) != checked(a).data.size()) {
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    return make_result(std::move(shape), a.node()->data, {a}, [](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Distances and losses

Tensor normalize_rows(const Tensor& a) {
    const auto r = a.rows();
    const auto c = a.cols();
    const auto& src = checked(a).data;
    std::vector<double> out(src.size());
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < c; ++j) sq += src[i * c + j] * src[i * c + j];
        if (sq == 0.0) throw DegenerateInputError("normalize_rows: zero-norm row " + std::to_string(i));
        norms[i] = std::sqrt(sq);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = src[i * c + j] / norms[i];
    }
    return make_result(a.shape(), std::move(out), {a}, [r, c, norms = std::move(norms)](Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = self.data.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += (g[j] - y[j] * dot) / norms[i];
        }
    });
}

Tensor neg_cosine_dist(const Tensor& u, const Tensor& v) {
    if (checked(u).data.size() != checked(v).data.size() || u.rows() != 1 || v.rows() != 1) {
        throw DimensionError("neg_cosine_dist: vectors of equal length required, got " + shape_str(u.shape()) +
                             " and " + shape_str(v.shape()));
    }
    const auto& x = u.node()->data;
    const auto& y = v.node()->data;
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * y[i];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
    }
    if (nx == 0.0 || ny == 0.0) throw DegenerateInputError("neg_cosine_dist: zero-norm vector");
    const double norm_x = std::sqrt(nx);
    const double norm_y = std::sqrt(ny);
    const double cosine = dot / (norm_x * norm_y);
    return make_result({}, {-cosine}, {u, v}, [cosine, norm_x, norm_y](Node& self) {
        const double g = self.grad[0];
        auto& pu = *self.parents[0];
        auto& pv = *self.parents[1];
        // d(cos)/dx = y/(|x||y|) - cos * x/|x|^2
        if (pu.requires_grad) {
            pu.ensure_grad();
            for (std::size_t i = 0; i < pu.data.size(); ++i) {
                pu.grad[i] -= g * (pv.data[i] / (norm_x * norm_y) - cosine * pu.data[i] / (norm_x * norm_x));
            }
        }
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (std::size_t i = 0; i < pv.data.size(); ++i) {
                pv.grad[i] -= g * (pu.data[i] / (norm_x * norm_y) - cosine * pv.data[i] / (norm_y * norm_y));
            }
        }
    });
}

Tensor squared_error(const Tensor& prediction, const Tensor& target) {
    if (checked(prediction).data.size() != checked(target).data.size()) {
        throw DimensionError("squared_error: " + shape_str(prediction.shape()) + " vs " +
                             shape_str(target.shape()));
    }
    const auto& p = prediction.node()->data;
    const auto& t = target.node()->data;
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
    return make_result({}, {total}, {prediction, target}, [](Node& self) {
        auto& pp = *self.parents[0];
        auto& pt = *self.parents[1];
        const double g = self.grad[0];
        if (pp.requires_grad) pp.ensure_grad();
        if (pt.requires_grad) pt.ensure_grad();
        for (std::size_t i = 0; i < pp.data.size(); ++i) {
            const double d = 2.0 * (pp.data[i] - pt.data[i]) * g;
            if (pp.requires_grad) pp.grad[i] += d;
            if (pt.requires_grad) pt.grad[i] -= d;
        }
    });
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
    const auto& root = checked(loss);
    if (root.data.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(root.shape));
    if (!root.requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !parent->leaf && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order) node->grad.assign(node->data.size(), 0.0);
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace ctxmeta::ad
