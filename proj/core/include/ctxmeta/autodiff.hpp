#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

/// Reverse-mode automatic differentiation over dense row-major tensors of doubles.
///
/// Graphs are built dynamically: every op returns a new Tensor that remembers its
/// parents and a closure that pushes its gradient back to them. Tensors have rank 0,
/// 1 or 2; rank-1 tensors behave as a single row wherever a matrix is expected.
///
/// Gradient semantics of backward():
///   * gradients of intermediate nodes are recomputed from zero on every call;
///   * gradients of leaves created with requires_grad accumulate across calls until
///     zero_grad() is invoked. The trainer zeroes all parameters before each episode.
///
/// A graph and its tensors belong to one thread. Tensor copies share the node; use
/// clone() for an independent deep copy of a leaf.
namespace ctxmeta::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

struct Node;

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Rank-2 tensor from nested rows.
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    /// Matrix view: rank 0 -> 1x1, rank 1 -> 1xn.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    /// Writable data; only allowed on leaves (parameters and constants).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    /// Gradient buffer (zeros when nothing was accumulated yet).
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, cut from the graph.
    Tensor detach() const;
    /// Independent leaf with copied values and the same requires_grad flag.
    Tensor clone() const;

    std::uint64_t id() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
    friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                              std::function<void(Node&)>);

    std::shared_ptr<Node> node_;
};

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    std::vector<std::shared_ptr<Node>> parents;
    /// Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    bool leaf = true;
    std::uint64_t id = 0;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

/// Builds an op result. The backward closure is only kept when some parent needs grads.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise arithmetic with 2-D broadcasting (each dim equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// Elementwise nonlinearities.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
/// Natural log; non-positive entries raise DegenerateInputError.
Tensor log(const Tensor& a);

/// Softmax along the last axis (rows of a matrix), max-shifted.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

/// Concatenation along the last axis; all parts must have the same row count.
Tensor concat(const std::vector<Tensor>& parts);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column sums: [r x c] -> [1 x c].
Tensor sum_rows(const Tensor& a);
/// Row sums: [r x c] -> [r x 1].
Tensor sum_cols(const Tensor& a);

// Indexing.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// out[s] = sum of rows i with segment[i] == s.
Tensor segment_sum(const Tensor& a, std::span<const std::size_t> segment, std::size_t num_segments);
/// out[r] = a[r, column[r]] as an [r x 1] tensor.
Tensor pick(const Tensor& a, std::span<const std::size_t> column);
Tensor reshape(const Tensor& a, Shape shape);

/// Each row divided by its L2 norm. Zero rows raise DegenerateInputError.
Tensor normalize_rows(const Tensor& a);
/// -<u,v>/(|u||v|) for two vectors of equal length; zero norms raise DegenerateInputError.
Tensor neg_cosine_dist(const Tensor& u, const Tensor& v);
/// Sum of squared differences.
Tensor squared_error(const Tensor& prediction, const Tensor& target);

/// Reverse sweep from a scalar. Non-scalar roots raise ContractError.
void backward(const Tensor& loss);

}  // namespace ctxmeta::ad
