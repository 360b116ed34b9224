#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mvcl/errors.hpp"
#include "mvcl/rng.hpp"

namespace mvcl {

namespace detail {
/// Allocator that default-initializes elements, so growing a buffer of
/// doubles does not zero-fill memory the caller is about to overwrite.
template <class T>
struct DefaultInitAlloc : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = DefaultInitAlloc<U>;
    };
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};
}  // namespace detail

/// Internal storage for tensor values and gradients.
using Buffer = std::vector<double, detail::DefaultInitAlloc<double>>;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

class Tensor;

/// One recorded operation: the tensors it consumed and a closure that
/// pushes the output adjoint back into their gradient buffers.
struct Node {
    std::vector<Tensor> parents;
    std::function<void(const Tensor& out)> backprop;
};

/// Dense row-major float64 tensor with optional gradient buffer.
///
/// Copying a Tensor copies a handle: data, gradient and graph node are
/// shared, which is what lets recorded nodes hold their parents cheaply.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

    static Tensor from_data(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Allocate with an unspecified value buffer (the gradient buffer, when
    /// present, still starts at zero). For op outputs that overwrite every
    /// entry before anyone reads them.
    static Tensor uninitialized(Shape shape, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t dim(std::size_t axis) const;

    double* data();
    const double* data() const;
    std::vector<double> to_vector() const;
    /// Value of a single-element tensor.
    double item() const;

    bool requires_grad() const;
    /// Gradient buffer; null when requires_grad() is false.
    double* grad();
    const double* grad() const;
    std::vector<double> grad_vector() const;
    void zero_grad();

    /// Claim the gradient buffer for a backward writer that covers every
    /// element: returns the buffer plus true when no writer has touched it
    /// since the last zero_grad (the first writer assigns instead of
    /// accumulating into a zeroed buffer, which skips the zero fill).
    /// Buffer is null when gradients are off.
    std::pair<double*, bool> claim_grad();

    /// Detached copy: same values, fresh buffers, no graph history.
    Tensor detached_copy(bool requires_grad = false) const;

    bool all_finite() const;

    /// Graph node that produced this tensor (null for leaves).
    const std::shared_ptr<Node>& node() const;
    void set_node(std::shared_ptr<Node> n);

    /// Identity of the underlying buffer (for graph traversal bookkeeping).
    const void* id() const { return impl_.get(); }

private:
    struct Impl {
        Shape shape;
        Buffer data;
        Buffer grad;  // empty unless requires_grad
        bool requires_grad = false;
        // The grad buffer is allocated without zeroing; while `grad_fresh`
        // it is logically zero but unwritten, and readers materialize the
        // zeros on access.
        bool grad_fresh = false;
        std::shared_ptr<Node> node;
    };
    std::shared_ptr<Impl> impl_;
};

/// While any NoGradGuard is alive, ops do not record graph nodes and their
/// outputs do not require gradients. Used by inference paths.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Reverse-mode sweep from a scalar root: topologically orders the recorded
/// nodes (parents before users), seeds d(root)/d(root) = 1, then visits each
/// node exactly once in reverse order accumulating adjoints.
void backward(const Tensor& root);

// ---- differentiable operations ------------------------------------------

/// [M,K]x[K,N] -> [M,N]; also accepts [B,M,K]x[K,N] -> [B,M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a [M,K] x b [N,K] -> a . b^T, shape [M,N].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Batched: [B,M,K]x[B,K,N] -> [B,M,N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Batched with the second operand transposed: [B,M,K]x[B,N,K] -> [B,M,N].
Tensor bmm_nt(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
/// Swap the last two axes of a 3-D tensor.
Tensor transpose_last(const Tensor& a);

/// Elementwise sum. b may also have a shape equal to a trailing suffix of
/// a's shape (bias [C] against [*,C], positional table [L,C] against
/// [B,L,C]); it is then broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// Multiply by a single-element tensor (participates in the graph).
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
/// Natural log; any entry <= 0 is a domain error.
Tensor log(const Tensor& a);

/// Inverted dropout: train mode zeroes entries with probability p and scales
/// survivors by 1/(1-p); eval mode (or p == 0) is the identity.
Tensor dropout(const Tensor& a, double p, Rng& rng, bool train_mode);

/// Normalize the last axis to zero mean / unit variance (no learned affine).
Tensor layer_norm(const Tensor& a, double eps = 1e-5);

/// Softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& a, int axis = -1);

/// Row-wise log(sum(exp(.))) over the last axis with max subtraction,
/// [R,C] -> [R].
Tensor logsumexp_rows(const Tensor& a);

/// Main diagonal of a square matrix, [N,N] -> [N].
Tensor diagonal(const Tensor& a);

Tensor sum(const Tensor& a);   // -> [1]
Tensor mean(const Tensor& a);  // -> [1]
/// Mean over one axis, e.g. [B,L,C] -(axis=1)-> [B,C].
Tensor mean_axis(const Tensor& a, int axis);

/// Scale the last axis of each entry row to unit L2 norm. A small guard is
/// added to the norm so the zero vector maps to the zero vector.
Tensor l2_normalize(const Tensor& a);

/// Rows of `table` ([V,D]) gathered by id: result shape = id_shape + [D].
/// Ids out of [0,V) are domain errors. Gradients scatter-add into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        const Shape& id_shape);

/// Same data, new shape (element count must match).
Tensor reshape(const Tensor& a, Shape shape);

// ---- verification helpers -------------------------------------------------

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences. Returns the max over elements of
///   |g_analytic - g_fd| / max(1e-8, |g_analytic| + |g_fd|).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double h = 1e-5);

}  // namespace mvcl
