#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mvcl/rng.hpp"
#include "mvcl/tensor.hpp"

namespace mvcl {

/// Ordered collection of named trainable tensors. Registration order is
/// stable, so optimizer state and checkpoints can address parameters by
/// either name or position.
class ParamStore {
public:
    /// Register a tensor initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    Tensor& add(const std::string& name, const Shape& shape, std::size_t fan_in,
                Rng& rng);
    /// Register an externally constructed tensor (must require grad).
    Tensor& add_tensor(const std::string& name, Tensor t);

    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    const std::vector<std::string>& names() const { return order_; }
    std::size_t count() const { return order_.size(); }
    /// Total scalar count across all tensors.
    std::size_t scalar_count() const;

    void zero_grad();

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> by_name_;
};

}  // namespace mvcl
