#include "featfield/optim.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "featfield/gnft.hpp"

namespace ff {

Adam::Adam(std::vector<Tensor> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].requires_grad())
      throw std::runtime_error("Adam: parameter " + std::to_string(i) + " does not require grad");
    m_[i].assign(params_[i].numel(), 0.0);
    v_[i].assign(params_[i].numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    Buffer& g = p.grad();
    const size_t n = p.numel();
    auto& m = m_[i];
    auto& v = v_[i];
    double p_norm2 = 0.0, u_norm2 = 0.0;
    std::vector<double> upd(cfg_.lamb ? n : 0);
    for (size_t j = 0; j < n; ++j) {
      const double gj = g.at(j);
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mh = m[j] / b1t;
      const double vh = v[j] / b2t;
      const double pj = p.at(j);
      const double u = mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * pj;
      if (cfg_.lamb) {
        upd[j] = u;
        p_norm2 += pj * pj;
        u_norm2 += u * u;
      } else {
        p.set(j, pj - cfg_.lr * u);
      }
    }
    if (cfg_.lamb) {
      const double pn = std::sqrt(p_norm2), un = std::sqrt(u_norm2);
      const double trust = (pn > 0 && un > 0) ? pn / un : 1.0;
      for (size_t j = 0; j < n; ++j) p.set(j, p.at(j) - cfg_.lr * trust * upd[j]);
    }
  }
}

void Adam::zero_grad() const {
  for (const Tensor& p : params_) {
    Tensor t = p;
    t.zero_grad();
  }
}

void Adam::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  size_t total = 0;
  for (const auto& m : m_) total += m.size();
  Tensor m = Tensor::zeros({total}, Dtype::F64);
  Tensor v = Tensor::zeros({total}, Dtype::F64);
  size_t at = 0;
  for (size_t i = 0; i < m_.size(); ++i)
    for (size_t j = 0; j < m_[i].size(); ++j, ++at) {
      m.set(at, m_[i][j]);
      v.set(at, v_[i][j]);
    }
  gnft::save(dir + "/m.gnft", m);
  gnft::save(dir + "/v.gnft", v);
  std::ofstream f(dir + "/state.json");
  f << nlohmann::json{{"steps", t_}, {"scalars", total}}.dump(2) << "\n";
}

void Adam::load(const std::string& dir) {
  std::ifstream f(dir + "/state.json");
  if (!f) throw std::runtime_error("Adam::load: missing " + dir + "/state.json");
  nlohmann::json j = nlohmann::json::parse(f);
  size_t total = 0;
  for (const auto& m : m_) total += m.size();
  if (j.at("scalars").get<size_t>() != total)
    throw std::runtime_error("Adam::load: state holds " +
                             std::to_string(j.at("scalars").get<size_t>()) +
                             " scalars, parameters need " + std::to_string(total));
  Tensor m = gnft::load(dir + "/m.gnft");
  Tensor v = gnft::load(dir + "/v.gnft");
  if (m.numel() != total || v.numel() != total)
    throw std::runtime_error("Adam::load: moment tensor size mismatch in " + dir);
  size_t at = 0;
  for (size_t i = 0; i < m_.size(); ++i)
    for (size_t jj = 0; jj < m_[i].size(); ++jj, ++at) {
      m_[i][jj] = m.at(at);
      v_[i][jj] = v.at(at);
    }
  t_ = j.at("steps").get<size_t>();
}

}  // namespace ff
