#include "ebr/params.hpp"

#include <cmath>
#include <cstring>

#include "ebr/error.hpp"

namespace ebr {

std::size_t ParamStore::add(std::string name, Matrix value) {
  names_.push_back(std::move(name));
  blocks_.push_back(std::move(value));
  return blocks_.size() - 1;
}

std::size_t ParamStore::index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ContractViolation("no parameter block '" + name + "'");
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += static_cast<std::size_t>(b.size());
  return n;
}

double& ParamStore::coord(std::size_t flat) {
  for (auto& b : blocks_) {
    const auto sz = static_cast<std::size_t>(b.size());
    if (flat < sz) return b.data()[flat];
    flat -= sz;
  }
  throw ContractViolation("parameter coordinate out of range");
}

double ParamStore::coord(std::size_t flat) const { return const_cast<ParamStore*>(this)->coord(flat); }

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    z.add(names_[i], Matrix::Zero(blocks_[i].rows(), blocks_[i].cols()));
  return z;
}

void ParamStore::set_zero() {
  for (auto& b : blocks_) b.setZero();
}

ParamStore& ParamStore::operator+=(const ParamStore& other) {
  if (other.size() != size()) throw ContractViolation("ParamStore layout mismatch");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i] += other.blocks_[i];
  return *this;
}

ParamStore& ParamStore::operator*=(double s) {
  for (auto& b : blocks_) b *= s;
  return *this;
}

double ParamStore::squared_norm() const {
  double s = 0;
  for (const auto& b : blocks_) s += b.squaredNorm();
  return s;
}

bool ParamStore::all_finite() const {
  for (const auto& b : blocks_)
    if (!b.allFinite()) return false;
  return true;
}

bool ParamStore::identical(const ParamStore& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

void ParamStore::to_checkpoint(Checkpoint& ck) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    Tensor t;
    t.name = names_[i];
    t.shape = {static_cast<std::size_t>(b.rows()), static_cast<std::size_t>(b.cols())};
    t.data.assign(b.data(), b.data() + b.size());
    ck.tensors.push_back(std::move(t));
  }
}

void ParamStore::from_checkpoint(const Checkpoint& ck) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& t = ck.tensor(names_[i]);
    auto& b = blocks_[i];
    if (t.shape.size() != 2 || t.shape[0] != static_cast<std::size_t>(b.rows()) ||
        t.shape[1] != static_cast<std::size_t>(b.cols()))
      throw CheckpointError("tensor '" + names_[i] + "' has an unexpected shape");
    std::memcpy(b.data(), t.data.data(), t.data.size() * sizeof(double));
  }
}

Adam::Adam(const ParamStore& layout, AdamConfig cfg)
    : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::step(ParamStore& params, const ParamStore& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i].cwiseProduct(grads[i]);
    if (cfg_.lr == 0.0) continue;
    params[i].array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

void clip_grad_norm(ParamStore& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm && norm > 0) grads *= max_norm / norm;
}

}  // namespace ebr
