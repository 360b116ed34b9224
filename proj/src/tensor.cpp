#include "mvcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#ifdef MVCL_USE_CBLAS
#include <dlfcn.h>

#include <cstdlib>
#if defined(__x86_64__)
#include <cpuid.h>
#endif

// OpenBLAS selects its compute kernels once, while the shared library
// initializes, from a table of known CPU models. Generic or very new CPU
// branding can miss that table, silently dropping the process to pre-AVX
// kernels that run several times slower. The library is therefore loaded
// lazily at the first large product: that leaves a window to steer the
// dispatch toward the AVX-512 kernel family when the CPU (and OS-enabled
// register state) actually supports it. An OPENBLAS_CORETYPE already in
// the environment always takes precedence, and a missing library just
// falls back to the inline kernel.
namespace {

bool cpu_has_avx512() {
#if defined(__x86_64__)
    unsigned int eax, ebx, ecx, edx;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
    const bool osxsave = ecx & (1u << 27), avx = ecx & (1u << 28);
    if (!osxsave || !avx) return false;
    if (!__get_cpuid_count(7, 0, &eax, &ebx, &ecx, &edx)) return false;
    if (!(ebx & (1u << 16))) return false;  // AVX512F
    unsigned int xlo, xhi;
    __asm__ volatile("xgetbv" : "=a"(xlo), "=d"(xhi) : "c"(0u));
    return (xlo & 0xe6u) == 0xe6u;  // XMM, YMM and ZMM state enabled
#else
    return false;
#endif
}

// Netlib CBLAS ABI constants.
constexpr int kCblasRowMajor = 101, kCblasNoTrans = 111, kCblasTrans = 112;

using DgemmFn = void (*)(int order, int trans_a, int trans_b, int m, int n,
                         int k, double alpha, const double* a, int lda,
                         const double* b, int ldb, double beta, double* c,
                         int ldc);

DgemmFn load_blas_dgemm() {
    if (cpu_has_avx512())
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
    void* lib = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!lib) lib = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (!lib) return nullptr;
    if (auto set_threads = reinterpret_cast<void (*)(int)>(
            dlsym(lib, "openblas_set_num_threads")))
        set_threads(1);
    return reinterpret_cast<DgemmFn>(dlsym(lib, "cblas_dgemm"));
}

DgemmFn blas_dgemm() {
    static DgemmFn fn = load_blas_dgemm();
    return fn;
}

}  // namespace
#endif

namespace mvcl {

// ---- shape helpers ---------------------------------------------------------

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
    throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank)
        throw ShapeError(op + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    *this = uninitialized(std::move(shape), requires_grad);
    std::fill(impl_->data.begin(), impl_->data.end(), fill);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values,
                         bool requires_grad) {
    if (numel(shape) != values.size())
        throw ShapeError("from_data: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    Tensor t = uninitialized(std::move(shape), requires_grad);
    std::copy(values.begin(), values.end(), t.impl_->data.begin());
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uninitialized(Shape shape, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.resize(numel(t.impl_->shape));
    t.impl_->requires_grad = requires_grad;
    if (requires_grad) {
        t.impl_->grad.resize(t.impl_->data.size());
        t.impl_->grad_fresh = true;
    }
    return t;
}

const Shape& Tensor::shape() const {
    if (!impl_) throw Error("use of an undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size())
        throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    return s[axis];
}

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }

std::vector<double> Tensor::to_vector() const {
    return {impl_->data.begin(), impl_->data.end()};
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

// Readers of a still-fresh grad buffer see the zeros it logically holds.
double* Tensor::grad() {
    if (!impl_ || !impl_->requires_grad) return nullptr;
    if (impl_->grad_fresh) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
        impl_->grad_fresh = false;
    }
    return impl_->grad.data();
}
const double* Tensor::grad() const {
    if (!impl_ || !impl_->requires_grad) return nullptr;
    if (impl_->grad_fresh) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
        impl_->grad_fresh = false;
    }
    return impl_->grad.data();
}

std::vector<double> Tensor::grad_vector() const {
    if (!requires_grad()) throw Error("grad_vector: tensor does not require grad");
    grad();  // materialize zeros if still fresh
    return {impl_->grad.begin(), impl_->grad.end()};
}

void Tensor::zero_grad() {
    if (impl_ && impl_->requires_grad) impl_->grad_fresh = true;
}

std::pair<double*, bool> Tensor::claim_grad() {
    if (!impl_ || !impl_->requires_grad) return {nullptr, false};
    const bool fresh = impl_->grad_fresh;
    impl_->grad_fresh = false;
    return {impl_->grad.data(), fresh};
}

Tensor Tensor::detached_copy(bool requires_grad) const {
    Tensor t = uninitialized(shape(), requires_grad);
    std::copy(impl_->data.begin(), impl_->data.end(), t.impl_->data.begin());
    return t;
}

bool Tensor::all_finite() const {
    for (double v : impl_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

const std::shared_ptr<Node>& Tensor::node() const {
    static const std::shared_ptr<Node> none;
    return impl_ ? impl_->node : none;
}

void Tensor::set_node(std::shared_ptr<Node> n) { impl_->node = std::move(n); }

// ---- grad mode -------------------------------------------------------------

namespace {
thread_local int no_grad_depth = 0;
}

bool grad_enabled() { return no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

namespace {

bool want_grad(std::initializer_list<const Tensor*> ins) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

/// Allocate the output of an op and, in grad mode, record its node.
Tensor make_result(Shape shape, std::vector<Tensor> parents,
                   std::function<void(const Tensor&)> backprop) {
    bool rg = false;
    if (grad_enabled())
        for (const Tensor& p : parents)
            if (p.requires_grad()) { rg = true; break; }
    Tensor out = Tensor::uninitialized(std::move(shape), rg);
    if (rg) {
        auto node = std::make_shared<Node>();
        node->parents = std::move(parents);
        node->backprop = std::move(backprop);
        out.set_node(std::move(node));
    }
    return out;
}

// Non-const access to a tensor's gradient inside backprop closures, where
// parents are held by const reference. Materializes zeros; for writers
// that only touch part of the buffer.
double* grad_of(const Tensor& t) { return const_cast<Tensor&>(t).grad(); }

// Destination for a full-coverage gradient writer: buffer plus whether
// this is the first write since zero_grad (assign) or a later one
// (accumulate).
using GradRef = std::pair<double*, bool>;

GradRef claim_of(const Tensor& t) { return const_cast<Tensor&>(t).claim_grad(); }

void axpy_grad(GradRef dst, std::size_t n, double alpha, const double* x) {
    double* y = dst.first;
    if (dst.second)
        for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
    else
        for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Writes g[i] (op)= f(i) over the whole buffer, assigning on first write.
template <class F>
void write_grad(GradRef dst, std::size_t n, F f) {
    double* g = dst.first;
    if (dst.second)
        for (std::size_t i = 0; i < n; ++i) g[i] = f(i);
    else
        for (std::size_t i = 0; i < n; ++i) g[i] += f(i);
}

}  // namespace

// ---- backward sweep --------------------------------------------------------

void backward(const Tensor& root) {
    if (root.size() != 1) throw ShapeError("backward: root must be a scalar");
    if (!root.requires_grad())
        throw Error("backward: root does not require grad");
    grad_of(root)[0] += 1.0;  // seed d(root)/d(root)
    if (!root.node()) return;

    // Post-order DFS: emits every reachable node after its parents, so the
    // list is in topological order; the reverse sweep then touches each
    // recorded operation exactly once.
    struct Frame {
        Tensor t;
        std::size_t next = 0;
    };
    std::vector<Tensor> order;
    std::unordered_set<const void*> seen;
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root.id());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& node = f.t.node();
        if (f.next < node->parents.size()) {
            Tensor p = node->parents[f.next++];
            if (p.node() && seen.insert(p.id()).second)
                stack.push_back({std::move(p), 0});
        } else {
            order.push_back(f.t);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        it->node()->backprop(*it);
}

// ---- GEMM kernel -----------------------------------------------------------

namespace {

void gemm_naive(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                double alpha, const double* A, const double* B, double beta,
                double* C) {
    if (beta == 0.0)
        std::fill(C, C + m * n, 0.0);
    else if (beta != 1.0)
        for (std::size_t i = 0; i < m * n; ++i) C[i] *= beta;
    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = alpha * A[i * k + p];
                const double* brow = B + p * n;
                double* crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        return;
    }
    if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double* arow = A + i * k;
                const double* brow = B + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                C[i * n + j] += alpha * acc;
            }
        return;
    }
    auto a_at = [&](std::size_t i, std::size_t p) {
        return ta ? A[p * m + i] : A[i * k + p];
    };
    auto b_at = [&](std::size_t p, std::size_t j) {
        return tb ? B[j * k + p] : B[p * n + j];
    };
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a_at(i, p) * b_at(p, j);
            C[i * n + j] += alpha * acc;
        }
}

// C = alpha * op(A) . op(B) + beta * C, all row-major.
// op(A) is [m,k], op(B) is [k,n], C is [m,n].
//
// Products too small to amortize a BLAS call's packing and dispatch cost
// (the per-sample attention matrices) stay on the inline kernel.
void gemm_rm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
             double alpha, const double* A, const double* B, double beta,
             double* C) {
#ifdef MVCL_USE_CBLAS
    if (m * n * k > 32768) {
        if (DgemmFn dgemm = blas_dgemm()) {
            dgemm(kCblasRowMajor, ta ? kCblasTrans : kCblasNoTrans,
                  tb ? kCblasTrans : kCblasNoTrans, static_cast<int>(m),
                  static_cast<int>(n), static_cast<int>(k), alpha, A,
                  static_cast<int>(ta ? m : k), B,
                  static_cast<int>(tb ? k : n), beta, C, static_cast<int>(n));
            return;
        }
    }
#endif
    gemm_naive(ta, tb, m, n, k, alpha, A, B, beta, C);
}

}  // namespace

// ---- matrix products -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", b, 2);
    if (a.rank() != 2 && a.rank() != 3) shape_fail("matmul", a.shape(), b.shape());
    const std::size_t k = a.shape().back();
    if (k != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const std::size_t n = b.dim(1);
    const std::size_t rows = a.size() / k;  // M or B*M

    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out = make_result(
        std::move(out_shape), {a, b}, [k, n, rows](const Tensor& out) {
            const Tensor& a = out.node()->parents[0];
            const Tensor& b = out.node()->parents[1];
            if (a.requires_grad()) {  // dA += dY . B^T
                const GradRef da = claim_of(a);
                gemm_rm(false, true, rows, k, n, 1.0, out.grad(), b.data(),
                        da.second ? 0.0 : 1.0, da.first);
            }
            if (b.requires_grad()) {  // dB += A^T . dY
                const GradRef db = claim_of(b);
                gemm_rm(true, false, k, n, rows, 1.0, a.data(), out.grad(),
                        db.second ? 0.0 : 1.0, db.first);
            }
        });
    gemm_rm(false, false, rows, n, k, 1.0, a.data(), b.data(), 0.0, out.data());
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank("matmul_nt", a, 2);
    require_rank("matmul_nt", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (k != b.dim(1)) shape_fail("matmul_nt", a.shape(), b.shape());

    Tensor out = make_result({m, n}, {a, b}, [m, k, n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        const Tensor& b = out.node()->parents[1];
        if (a.requires_grad()) {  // dA += dY . B
            const GradRef da = claim_of(a);
            gemm_rm(false, false, m, k, n, 1.0, out.grad(), b.data(),
                    da.second ? 0.0 : 1.0, da.first);
        }
        if (b.requires_grad()) {  // dB += dY^T . A
            const GradRef db = claim_of(b);
            gemm_rm(true, false, n, k, m, 1.0, out.grad(), a.data(),
                    db.second ? 0.0 : 1.0, db.first);
        }
    });
    gemm_rm(false, true, m, n, k, 1.0, a.data(), b.data(), 0.0, out.data());
    return out;
}

namespace {

Tensor batched_product(const std::string& name, const Tensor& a, const Tensor& b,
                       bool nt) {
    require_rank(name, a, 3);
    require_rank(name, b, 3);
    const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t bn = nt ? b.dim(1) : b.dim(2);
    const std::size_t bk = nt ? b.dim(2) : b.dim(1);
    if (b.dim(0) != bs || bk != k) shape_fail(name, a.shape(), b.shape());
    const std::size_t n = bn;

    Tensor out = make_result(
        {bs, m, n}, {a, b}, [bs, m, k, n, nt](const Tensor& out) {
            const Tensor& a = out.node()->parents[0];
            const Tensor& b = out.node()->parents[1];
            // Claimed once: the per-batch products cover disjoint slices,
            // so a fresh buffer takes beta 0 uniformly.
            const GradRef da = a.requires_grad() ? claim_of(a) : GradRef{};
            const GradRef db = b.requires_grad() ? claim_of(b) : GradRef{};
            const double beta_a = da.second ? 0.0 : 1.0;
            const double beta_b = db.second ? 0.0 : 1.0;
            for (std::size_t i = 0; i < bs; ++i) {
                const double* dy = out.grad() + i * m * n;
                const double* av = a.data() + i * m * k;
                const double* bv = b.data() + i * (nt ? n * k : k * n);
                if (da.first) {
                    // nt: dA += dY . B ; plain: dA += dY . B^T
                    gemm_rm(false, !nt, m, k, n, 1.0, dy, bv, beta_a,
                            da.first + i * m * k);
                }
                if (db.first) {
                    double* dbi = db.first + i * (nt ? n * k : k * n);
                    if (nt)  // dB += dY^T . A
                        gemm_rm(true, false, n, k, m, 1.0, dy, av, beta_b, dbi);
                    else  // dB += A^T . dY
                        gemm_rm(true, false, k, n, m, 1.0, av, dy, beta_b, dbi);
                }
            }
        });
    for (std::size_t i = 0; i < bs; ++i)
        gemm_rm(false, nt, m, n, k, 1.0, a.data() + i * m * k,
                b.data() + i * (nt ? n * k : k * n), 0.0, out.data() + i * m * n);
    return out;
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
    return batched_product("bmm", a, b, false);
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    return batched_product("bmm_nt", a, b, true);
}

Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = make_result({n, m}, {a}, [m, n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [da, fresh] = claim_of(a);
        const double* dy = out.grad();
        if (fresh)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) da[j * n + i] = dy[i * m + j];
        else
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) da[j * n + i] += dy[i * m + j];
    });
    const double* src = a.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    return out;
}

Tensor transpose_last(const Tensor& a) {
    require_rank("transpose_last", a, 3);
    const std::size_t bs = a.dim(0), m = a.dim(1), n = a.dim(2);
    Tensor out = make_result({bs, n, m}, {a}, [bs, m, n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [dag, fresh] = claim_of(a);
        for (std::size_t b = 0; b < bs; ++b) {
            double* da = dag + b * m * n;
            const double* dy = out.grad() + b * m * n;
            if (fresh)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        da[j * n + i] = dy[i * m + j];
            else
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                        da[j * n + i] += dy[i * m + j];
        }
    });
    for (std::size_t b = 0; b < bs; ++b) {
        const double* src = a.data() + b * m * n;
        double* dst = out.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
    return out;
}

// ---- elementwise -----------------------------------------------------------

namespace {

/// True when b's shape equals a trailing suffix of a's shape.
bool is_suffix_shape(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    if (!is_suffix_shape(a.shape(), b.shape())) shape_fail("add", a.shape(), b.shape());
    const std::size_t n = a.size(), bn = b.size();
    Tensor out = make_result(a.shape(), {a, b}, [n, bn](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        const Tensor& b = out.node()->parents[1];
        if (a.requires_grad()) axpy_grad(claim_of(a), n, 1.0, out.grad());
        if (b.requires_grad()) {
            const auto [db, fresh] = claim_of(b);
            const double* dy = out.grad();
            std::size_t base = 0;
            if (fresh) {
                for (std::size_t j = 0; j < bn; ++j) db[j] = dy[j];
                base = bn;
            }
            for (; base < n; base += bn)
                for (std::size_t j = 0; j < bn; ++j) db[j] += dy[base + j];
        }
    });
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    if (bn == n) {
        for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
    } else {
        for (std::size_t base = 0; base < n; base += bn)
            for (std::size_t j = 0; j < bn; ++j) ov[base + j] = av[base + j] + bv[j];
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape())) shape_fail("sub", a.shape(), b.shape());
    const std::size_t n = a.size();
    Tensor out = make_result(a.shape(), {a, b}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        const Tensor& b = out.node()->parents[1];
        if (a.requires_grad()) axpy_grad(claim_of(a), n, 1.0, out.grad());
        if (b.requires_grad()) axpy_grad(claim_of(b), n, -1.0, out.grad());
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!same_shape(a.shape(), b.shape())) shape_fail("mul", a.shape(), b.shape());
    const std::size_t n = a.size();
    Tensor out = make_result(a.shape(), {a, b}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        const Tensor& b = out.node()->parents[1];
        const double* dy = out.grad();
        if (a.requires_grad()) {
            const double* bv = b.data();
            write_grad(claim_of(a), n, [&](std::size_t i) { return dy[i] * bv[i]; });
        }
        if (b.requires_grad()) {
            const double* av = a.data();
            write_grad(claim_of(b), n, [&](std::size_t i) { return dy[i] * av[i]; });
        }
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    const std::size_t n = a.size();
    Tensor out = make_result(a.shape(), {a}, [n, c](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (a.requires_grad()) axpy_grad(claim_of(a), n, c, out.grad());
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
    return out;
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("scale_by: scale must be a single element");
    const std::size_t n = a.size();
    Tensor out = make_result(a.shape(), {a, s}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        const Tensor& s = out.node()->parents[1];
        const double* dy = out.grad();
        if (a.requires_grad()) axpy_grad(claim_of(a), n, s.data()[0], dy);
        if (s.requires_grad()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += dy[i] * a.data()[i];
            const auto [ds, fresh] = claim_of(s);
            if (fresh)
                ds[0] = acc;
            else
                ds[0] += acc;
        }
    });
    const double c = s.data()[0];
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
    return out;
}

Tensor reciprocal(const Tensor& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i)
        if (a.data()[i] == 0.0) throw DomainError("reciprocal: zero entry");
    Tensor out = make_result(a.shape(), {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double* dy = out.grad();
        const double* y = out.data();
        write_grad(claim_of(a), n,
                   [&](std::size_t i) { return -dy[i] * y[i] * y[i]; });
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = 1.0 / a.data()[i];
    return out;
}

Tensor relu(const Tensor& a) {
    const std::size_t n = a.size();
    Tensor out = make_result(a.shape(), {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double* dy = out.grad();
        const double* av = a.data();
        write_grad(claim_of(a), n,
                   [&](std::size_t i) { return av[i] > 0.0 ? dy[i] : 0.0; });
    });
    for (std::size_t i = 0; i < n; ++i)
        out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    return out;
}

Tensor exp(const Tensor& a) {
    const std::size_t n = a.size();
    Tensor out = make_result(a.shape(), {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double* dy = out.grad();
        const double* y = out.data();
        write_grad(claim_of(a), n, [&](std::size_t i) { return dy[i] * y[i]; });
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
    return out;
}

Tensor log(const Tensor& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i)
        if (a.data()[i] <= 0.0)
            throw DomainError("log: non-positive entry " +
                              std::to_string(a.data()[i]));
    Tensor out = make_result(a.shape(), {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double* dy = out.grad();
        const double* av = a.data();
        write_grad(claim_of(a), n, [&](std::size_t i) { return dy[i] / av[i]; });
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::log(a.data()[i]);
    return out;
}

Tensor dropout(const Tensor& a, double p, Rng& rng, bool train_mode) {
    if (p < 0.0 || p >= 1.0) throw ParamError("dropout: p must be in [0, 1)");
    if (!train_mode || p == 0.0) return a;  // exact identity, RNG untouched
    const std::size_t n = a.size();
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i)
        (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    Tensor out = make_result(a.shape(), {a}, [n, mask](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double* dy = out.grad();
        const double* mv = mask->data();
        write_grad(claim_of(a), n, [&](std::size_t i) { return dy[i] * mv[i]; });
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * (*mask)[i];
    return out;
}

// ---- normalization ---------------------------------------------------------

Tensor layer_norm(const Tensor& a, double eps) {
    if (a.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t c = a.shape().back();
    const std::size_t rows = a.size() / c;
    auto mu = std::make_shared<std::vector<double>>(rows);
    auto sd = std::make_shared<std::vector<double>>(rows);

    Tensor out = make_result(a.shape(), {a}, [rows, c, mu, sd](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [da, fresh] = claim_of(a);
        const double* dy = out.grad();
        const double* y = out.data();  // y is exactly the normalized x
        for (std::size_t r = 0; r < rows; ++r) {
            const double* dyr = dy + r * c;
            const double* yr = y + r * c;
            double mean_dy = 0.0, mean_dyy = 0.0;
            for (std::size_t i = 0; i < c; ++i) {
                mean_dy += dyr[i];
                mean_dyy += dyr[i] * yr[i];
            }
            mean_dy /= static_cast<double>(c);
            mean_dyy /= static_cast<double>(c);
            const double inv_sd = 1.0 / (*sd)[r];
            double* dar = da + r * c;
            if (fresh)
                for (std::size_t i = 0; i < c; ++i)
                    dar[i] = (dyr[i] - mean_dy - yr[i] * mean_dyy) * inv_sd;
            else
                for (std::size_t i = 0; i < c; ++i)
                    dar[i] += (dyr[i] - mean_dy - yr[i] * mean_dyy) * inv_sd;
        }
    });

    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = a.data() + r * c;
        double m = 0.0;
        for (std::size_t i = 0; i < c; ++i) m += xr[i];
        m /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            const double d = xr[i] - m;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double s = std::sqrt(var + eps);
        (*mu)[r] = m;
        (*sd)[r] = s;
        double* yr = out.data() + r * c;
        for (std::size_t i = 0; i < c; ++i) yr[i] = (xr[i] - m) / s;
    }
    return out;
}

namespace {

struct AxisSpan {
    std::size_t outer, len, inner;
};

AxisSpan axis_span(const std::string& op, const Shape& shape, int axis) {
    const int rank = static_cast<int>(shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ShapeError(op + ": axis out of range for " + shape_str(shape));
    AxisSpan s{1, shape[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) s.inner *= shape[static_cast<std::size_t>(i)];
    return s;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    const AxisSpan span = axis_span("softmax", a.shape(), axis);
    Tensor out = make_result(a.shape(), {a}, [span](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [da, fresh] = claim_of(a);
        const double* dy = out.grad();
        const double* y = out.data();
        for (std::size_t o = 0; o < span.outer; ++o)
            for (std::size_t in = 0; in < span.inner; ++in) {
                const std::size_t base = o * span.len * span.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < span.len; ++j) {
                    const std::size_t idx = base + j * span.inner;
                    dot += dy[idx] * y[idx];
                }
                if (fresh)
                    for (std::size_t j = 0; j < span.len; ++j) {
                        const std::size_t idx = base + j * span.inner;
                        da[idx] = y[idx] * (dy[idx] - dot);
                    }
                else
                    for (std::size_t j = 0; j < span.len; ++j) {
                        const std::size_t idx = base + j * span.inner;
                        da[idx] += y[idx] * (dy[idx] - dot);
                    }
            }
    });
    const double* x = a.data();
    double* y = out.data();
    for (std::size_t o = 0; o < span.outer; ++o)
        for (std::size_t in = 0; in < span.inner; ++in) {
            const std::size_t base = o * span.len * span.inner + in;
            double mx = x[base];
            for (std::size_t j = 1; j < span.len; ++j)
                mx = std::max(mx, x[base + j * span.inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < span.len; ++j) {
                const std::size_t idx = base + j * span.inner;
                y[idx] = std::exp(x[idx] - mx);
                z += y[idx];
            }
            for (std::size_t j = 0; j < span.len; ++j) y[base + j * span.inner] /= z;
        }
    return out;
}

Tensor logsumexp_rows(const Tensor& a) {
    require_rank("logsumexp_rows", a, 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out = make_result({r}, {a}, [r, c](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [da, fresh] = claim_of(a);
        const double* dy = out.grad();
        const double* y = out.data();
        const double* x = a.data();
        // d lse / d x_ij = exp(x_ij - lse_i) (the row softmax)
        if (fresh)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    da[i * c + j] = dy[i] * std::exp(x[i * c + j] - y[i]);
        else
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    da[i * c + j] += dy[i] * std::exp(x[i * c + j] - y[i]);
    });
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = a.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        out.data()[i] = mx + std::log(z);
    }
    return out;
}

Tensor diagonal(const Tensor& a) {
    require_rank("diagonal", a, 2);
    const std::size_t n = a.dim(0);
    if (a.dim(1) != n)
        throw ShapeError("diagonal: matrix not square " + shape_str(a.shape()));
    Tensor out = make_result({n}, {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        double* da = grad_of(a);
        const double* dy = out.grad();
        for (std::size_t i = 0; i < n; ++i) da[i * n + i] += dy[i];
    });
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i * n + i];
    return out;
}

Tensor sum(const Tensor& a) {
    const std::size_t n = a.size();
    Tensor out = make_result({1}, {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double g = out.grad()[0];
        const auto [da, fresh] = claim_of(a);
        if (fresh)
            std::fill(da, da + n, g);
        else
            for (std::size_t i = 0; i < n; ++i) da[i] += g;
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
    out.data()[0] = acc;
    return out;
}

Tensor mean(const Tensor& a) {
    const std::size_t n = a.size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    Tensor out = make_result({1}, {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const double g = out.grad()[0] / static_cast<double>(n);
        const auto [da, fresh] = claim_of(a);
        if (fresh)
            std::fill(da, da + n, g);
        else
            for (std::size_t i = 0; i < n; ++i) da[i] += g;
    });
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
    out.data()[0] = acc / static_cast<double>(n);
    return out;
}

Tensor mean_axis(const Tensor& a, int axis) {
    const AxisSpan span = axis_span("mean_axis", a.shape(), axis);
    const int rank = static_cast<int>(a.rank());
    int ax = axis < 0 ? axis + rank : axis;
    Shape out_shape;
    for (int i = 0; i < rank; ++i)
        if (i != ax) out_shape.push_back(a.shape()[static_cast<std::size_t>(i)]);
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor out = make_result(std::move(out_shape), {a}, [span](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [da, fresh] = claim_of(a);
        const double* dy = out.grad();
        const double inv = 1.0 / static_cast<double>(span.len);
        for (std::size_t o = 0; o < span.outer; ++o)
            for (std::size_t in = 0; in < span.inner; ++in) {
                const double g = dy[o * span.inner + in] * inv;
                const std::size_t base = o * span.len * span.inner + in;
                if (fresh)
                    for (std::size_t j = 0; j < span.len; ++j)
                        da[base + j * span.inner] = g;
                else
                    for (std::size_t j = 0; j < span.len; ++j)
                        da[base + j * span.inner] += g;
            }
    });
    const double inv = 1.0 / static_cast<double>(span.len);
    for (std::size_t o = 0; o < span.outer; ++o)
        for (std::size_t in = 0; in < span.inner; ++in) {
            const std::size_t base = o * span.len * span.inner + in;
            double acc = 0.0;
            for (std::size_t j = 0; j < span.len; ++j)
                acc += a.data()[base + j * span.inner];
            out.data()[o * span.inner + in] = acc * inv;
        }
    return out;
}

Tensor l2_normalize(const Tensor& a) {
    if (a.rank() < 1) throw ShapeError("l2_normalize: rank-0 input");
    constexpr double kGuard = 1e-12;
    const std::size_t c = a.shape().back();
    const std::size_t rows = a.size() / c;
    auto norms = std::make_shared<std::vector<double>>(rows);

    Tensor out = make_result(a.shape(), {a}, [rows, c, norms](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (!a.requires_grad()) return;
        const auto [da, fresh] = claim_of(a);
        const double* dy = out.grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double n = (*norms)[r];
            const double s = n + kGuard;
            const double* xr = a.data() + r * c;
            const double* dyr = dy + r * c;
            double dot = 0.0;
            for (std::size_t i = 0; i < c; ++i) dot += dyr[i] * xr[i];
            const double coef = n > 0.0 ? dot / (n * s * s) : 0.0;
            double* dar = da + r * c;
            if (fresh)
                for (std::size_t i = 0; i < c; ++i)
                    dar[i] = dyr[i] / s - xr[i] * coef;
            else
                for (std::size_t i = 0; i < c; ++i)
                    dar[i] += dyr[i] / s - xr[i] * coef;
        }
    });
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = a.data() + r * c;
        double sq = 0.0;
        for (std::size_t i = 0; i < c; ++i) sq += xr[i] * xr[i];
        const double n = std::sqrt(sq);
        (*norms)[r] = n;
        const double inv = 1.0 / (n + kGuard);
        double* yr = out.data() + r * c;
        for (std::size_t i = 0; i < c; ++i) yr[i] = xr[i] * inv;
    }
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        const Shape& id_shape) {
    require_rank("embedding_lookup", table, 2);
    if (ids.size() != numel(id_shape))
        throw ShapeError("embedding_lookup: " + std::to_string(ids.size()) +
                         " ids for shape " + shape_str(id_shape));
    const std::size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw DomainError("embedding_lookup: id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(v));
    Shape out_shape = id_shape;
    out_shape.push_back(d);
    auto kept = std::make_shared<std::vector<int>>(ids);

    Tensor out = make_result(std::move(out_shape), {table}, [d, kept](const Tensor& out) {
        const Tensor& table = out.node()->parents[0];
        if (!table.requires_grad()) return;
        double* dt = grad_of(table);
        const double* dy = out.grad();
        for (std::size_t k = 0; k < kept->size(); ++k) {
            double* row = dt + static_cast<std::size_t>((*kept)[k]) * d;
            const double* g = dy + k * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
        }
    });
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const double* row = table.data() + static_cast<std::size_t>(ids[k]) * d;
        std::copy(row, row + d, out.data() + k * d);
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    const std::size_t n = a.size();
    Tensor out = make_result(std::move(shape), {a}, [n](const Tensor& out) {
        const Tensor& a = out.node()->parents[0];
        if (a.requires_grad()) axpy_grad(claim_of(a), n, 1.0, out.grad());
    });
    std::copy(a.data(), a.data() + n, out.data());
    return out;
}

// ---- gradient check --------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h) {
    if (h <= 0.0) throw ParamError("grad_check: step must be positive");
    Tensor xg = x.detached_copy(true);
    Tensor y = f(xg);
    if (y.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    if (!y.all_finite()) throw NumericError("grad_check: f produced non-finite value");
    backward(y);
    const std::vector<double> analytic = xg.grad_vector();

    Tensor xp = x.detached_copy(false);
    double worst = 0.0;
    for (std::size_t i = 0; i < xp.size(); ++i) {
        const double orig = xp.data()[i];
        xp.data()[i] = orig + h;
        const double fp = f(xp).item();
        xp.data()[i] = orig - h;
        const double fm = f(xp).item();
        xp.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: finite-difference probe non-finite");
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(fd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace mvcl
