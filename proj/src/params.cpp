#include "mvcl/params.hpp"

#include <cmath>

namespace mvcl {

Tensor& ParamStore::add(const std::string& name, const Shape& shape,
                        std::size_t fan_in, Rng& rng) {
    if (fan_in == 0) throw ParamError("param '" + name + "': fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> values(numel(shape));
    for (double& v : values) v = rng.uniform(-bound, bound);
    return add_tensor(name, Tensor::from_data(shape, std::move(values), true));
}

Tensor& ParamStore::add_tensor(const std::string& name, Tensor t) {
    if (!t.requires_grad())
        throw ParamError("param '" + name + "' must require gradients");
    auto [it, fresh] = by_name_.emplace(name, std::move(t));
    if (!fresh) throw ParamError("param '" + name + "' registered twice");
    order_.push_back(name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const {
    return by_name_.count(name) != 0;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ParamError("unknown param '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ParamError("unknown param '" + name + "'");
    return it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += by_name_.at(name).size();
    return n;
}

void ParamStore::zero_grad() {
    for (const auto& name : order_) by_name_.at(name).zero_grad();
}

}  // namespace mvcl
