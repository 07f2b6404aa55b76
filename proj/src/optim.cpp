#include "endoclip/optim.hpp"

#include "endoclip/errors.hpp"

#include <cmath>

namespace endoclip {

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adamw: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adamw: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("adamw: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("adamw: weight_decay must be non-negative");
}

void adamw_step(ParameterList& params, AdamWState& state, const AdamWConfig& cfg) {
  for (auto& p : params) {
    if (p.tensor.requires_grad() && !p.tensor.has_grad()) {
      throw ContractError("adamw: parameter '" + p.name + "' has no gradient");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    Matrix& w = p.tensor.mutable_value();
    const Matrix& g = p.tensor.grad();
    auto [it, fresh] = state.moments.try_emplace(p.name);
    auto& mom = it->second;
    if (fresh) {
      mom.m = Matrix::Zero(w.rows(), w.cols());
      mom.v = Matrix::Zero(w.rows(), w.cols());
    }
    mom.m = cfg.beta1 * mom.m + (1.0 - cfg.beta1) * g;
    mom.v = cfg.beta2 * mom.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    w *= 1.0 - cfg.lr * cfg.weight_decay;
    w.array() -= cfg.lr * (mom.m.array() / bc1) / ((mom.v.array() / bc2).sqrt() + cfg.eps);
  }
}

}  // namespace endoclip
