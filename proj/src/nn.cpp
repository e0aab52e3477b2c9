#include "mistake/nn.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace mistake::nn {

namespace {
constexpr double kBceEps = 1e-7;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.data.assign(shape_product(shape), 0.0);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::vec(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)) {
  grad = Tensor::zeros(v.shape);
  value = std::move(v);
}

void Parameter::zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }

ParamId ParameterStore::add(std::string name, Tensor init) {
  params_.emplace_back(std::move(name), std::move(init));
  return params_.size() - 1;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

void ParameterStore::save(std::ostream& out) const {
  out << "params " << params_.size() << "\n";
  char buf[40];
  for (const auto& p : params_) {
    out << "param " << p.name << " " << p.value.shape.size();
    for (std::size_t d : p.value.shape) out << " " << d;
    out << "\n";
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.value[i]);
      out << buf << (i + 1 == p.value.size() ? "" : " ");
    }
    out << "\n";
  }
}

void ParameterStore::load(std::istream& in) {
  std::string tag;
  std::size_t count = 0;
  in >> tag >> count;
  if (tag != "params") throw std::runtime_error("checkpoint: expected `params` header");
  if (count != params_.size())
    throw std::runtime_error("checkpoint: parameter count mismatch (file " + std::to_string(count) +
                             ", model " + std::to_string(params_.size()) + ")");
  for (auto& p : params_) {
    std::string name;
    std::size_t ndims = 0;
    in >> tag >> name >> ndims;
    if (tag != "param" || !in) throw std::runtime_error("checkpoint: malformed param header");
    if (name != p.name) throw std::runtime_error("checkpoint: parameter order mismatch at " + name);
    std::vector<std::size_t> shape(ndims);
    for (auto& d : shape) in >> d;
    if (shape != p.value.shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    for (std::size_t i = 0; i < p.value.size(); ++i) in >> p.value[i];
    if (!in) throw std::runtime_error("checkpoint: truncated values for " + name);
  }
}

Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, util::Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros({fan_out, fan_in});
  for (double& v : t.data) v = rng.uniform(-a, a);
  return t;
}

Tensor uniform_init(std::vector<std::size_t> shape, double bound, util::Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Tape::Node Tape::push(Tensor value, std::function<void()> back) {
  TapeNode node;
  node.grad = Tensor::zeros(value.shape);
  node.value = std::move(value);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::Node Tape::input(Tensor value) { return push(std::move(value)); }

Tape::Node Tape::param(ParamId id) {
  Node n = push(params_->p(id).value);
  return push_param_hook(n, id);
}

// Grad flow back into the store happens through a trailing closure; kept as a
// helper so embedding() can share the pattern for single rows.
Tape::Node Tape::push_param_hook(Node n, ParamId id) {
  Parameter& p = params_->p(id);
  nodes_[n].back = [this, n, &p]() {
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nodes_[n].grad[i];
  };
  return n;
}

Tape::Node Tape::embedding(ParamId table, std::size_t index) {
  Parameter& t = params_->p(table);
  if (t.value.shape.size() != 2) throw std::invalid_argument("embedding: table must be 2-d");
  const std::size_t rows = t.value.shape[0], cols = t.value.shape[1];
  if (index >= rows) throw std::out_of_range("embedding: row index out of range");
  Tensor row = Tensor::zeros({cols});
  for (std::size_t j = 0; j < cols; ++j) row[j] = t.value[index * cols + j];
  Node n = push(std::move(row));
  nodes_[n].back = [this, n, &t, index, cols]() {
    for (std::size_t j = 0; j < cols; ++j) t.grad[index * cols + j] += nodes_[n].grad[j];
  };
  return n;
}

Tape::Node Tape::affine(ParamId w, ParamId b, Node x) {
  Parameter& pw = params_->p(w);
  Parameter& pb = params_->p(b);
  const Tensor& xv = nodes_[x].value;
  if (pw.value.shape.size() != 2 || pw.value.shape[1] != xv.size() || pb.value.size() != pw.value.shape[0])
    throw std::invalid_argument("affine: shape mismatch for " + pw.name);
  const std::size_t m = pw.value.shape[0], n = pw.value.shape[1];
  Tensor y = Tensor::zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = pb.value[i];
    const double* wrow = pw.value.data.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) s += wrow[j] * xv[j];
    y[i] = s;
  }
  Node out = push(std::move(y));
  nodes_[out].back = [this, out, x, &pw, &pb, m, n]() {
    const Tensor& dy = nodes_[out].grad;
    const Tensor& xv2 = nodes_[x].value;
    Tensor& dx = nodes_[x].grad;
    for (std::size_t i = 0; i < m; ++i) {
      double g = dy[i];
      pb.grad[i] += g;
      double* wgrow = pw.grad.data.data() + i * n;
      const double* wrow = pw.value.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        wgrow[j] += g * xv2[j];
        dx[j] += g * wrow[j];
      }
    }
  };
  return out;
}

Tape::Node Tape::concat(std::span<const Node> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::size_t total = 0;
  for (Node p : parts) total += nodes_[p].value.size();
  Tensor y = Tensor::zeros({total});
  std::size_t off = 0;
  for (Node p : parts) {
    const Tensor& v = nodes_[p].value;
    std::copy(v.data.begin(), v.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  std::vector<Node> captured(parts.begin(), parts.end());
  Node out = push(std::move(y));
  nodes_[out].back = [this, out, captured]() {
    const Tensor& dy = nodes_[out].grad;
    std::size_t pos = 0;
    for (Node p : captured) {
      Tensor& dp = nodes_[p].grad;
      for (std::size_t j = 0; j < dp.size(); ++j) dp[j] += dy[pos + j];
      pos += dp.size();
    }
  };
  return out;
}

Tape::Node Tape::tanh(Node x) {
  Tensor y = nodes_[x].value;
  for (double& v : y.data) v = std::tanh(v);
  Node out = push(std::move(y));
  nodes_[out].back = [this, out, x]() {
    const Tensor& yv = nodes_[out].value;
    const Tensor& dy = nodes_[out].grad;
    Tensor& dx = nodes_[x].grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * (1.0 - yv[i] * yv[i]);
  };
  return out;
}

Tape::Node Tape::sigmoid(Node x) {
  Tensor y = nodes_[x].value;
  for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
  Node out = push(std::move(y));
  nodes_[out].back = [this, out, x]() {
    const Tensor& yv = nodes_[out].value;
    const Tensor& dy = nodes_[out].grad;
    Tensor& dx = nodes_[x].grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
  };
  return out;
}

Tape::LstmState Tape::lstm_initial(std::size_t hidden_dim) {
  return {input(Tensor::zeros({hidden_dim})), input(Tensor::zeros({hidden_dim}))};
}

Tape::LstmState Tape::lstm_step(Node x, LstmState prev, ParamId w_x, ParamId w_h, ParamId b) {
  Parameter& pwx = params_->p(w_x);
  Parameter& pwh = params_->p(w_h);
  Parameter& pb = params_->p(b);
  const Tensor& xv = nodes_[x].value;
  const Tensor& hv = nodes_[prev.h].value;
  const Tensor& cv = nodes_[prev.c].value;
  const std::size_t hd = hv.size();
  const std::size_t ed = xv.size();
  if (pwx.value.shape != std::vector<std::size_t>{4 * hd, ed} ||
      pwh.value.shape != std::vector<std::size_t>{4 * hd, hd} || pb.value.size() != 4 * hd ||
      cv.size() != hd)
    throw std::invalid_argument("lstm_step: shape mismatch");

  // Pre-activations, gate order (i, f, g, o).
  std::vector<double> a(4 * hd);
  for (std::size_t r = 0; r < 4 * hd; ++r) {
    double s = pb.value[r];
    const double* wx = pwx.value.data.data() + r * ed;
    for (std::size_t j = 0; j < ed; ++j) s += wx[j] * xv[j];
    const double* wh = pwh.value.data.data() + r * hd;
    for (std::size_t j = 0; j < hd; ++j) s += wh[j] * hv[j];
    a[r] = s;
  }
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> gi(hd), gf(hd), gg(hd), go(hd), tc(hd);
  Tensor cnew = Tensor::zeros({hd});
  Tensor hnew = Tensor::zeros({hd});
  for (std::size_t k = 0; k < hd; ++k) {
    gi[k] = sig(a[k]);
    gf[k] = sig(a[hd + k]);
    gg[k] = std::tanh(a[2 * hd + k]);
    go[k] = sig(a[3 * hd + k]);
    cnew[k] = gf[k] * cv[k] + gi[k] * gg[k];
    tc[k] = std::tanh(cnew[k]);
    hnew[k] = go[k] * tc[k];
  }

  Node c_out = push(std::move(cnew));
  Node h_out = push(std::move(hnew));
  // The fused backward hangs off h_out; c_out's closure is empty and its grad
  // is read directly, so h_out must be created after c_out (reverse walk then
  // reaches h_out first).
  nodes_[h_out].back = [this, h_out, c_out, x, prev, &pwx, &pwh, &pb, hd, ed, gi, gf, gg, go, tc]() {
    const Tensor& dh = nodes_[h_out].grad;
    const Tensor& dc_in = nodes_[c_out].grad;
    const Tensor& xv2 = nodes_[x].value;
    const Tensor& hv2 = nodes_[prev.h].value;
    const Tensor& cv2 = nodes_[prev.c].value;
    std::vector<double> da(4 * hd);
    for (std::size_t k = 0; k < hd; ++k) {
      double dgo = dh[k] * tc[k];
      double dc = dc_in[k] + dh[k] * go[k] * (1.0 - tc[k] * tc[k]);
      double dgi = dc * gg[k];
      double dgg = dc * gi[k];
      double dgf = dc * cv2[k];
      nodes_[prev.c].grad[k] += dc * gf[k];
      da[k] = dgi * gi[k] * (1.0 - gi[k]);
      da[hd + k] = dgf * gf[k] * (1.0 - gf[k]);
      da[2 * hd + k] = dgg * (1.0 - gg[k] * gg[k]);
      da[3 * hd + k] = dgo * go[k] * (1.0 - go[k]);
    }
    for (std::size_t r = 0; r < 4 * hd; ++r) {
      double g = da[r];
      pb.grad[r] += g;
      double* wxg = pwx.grad.data.data() + r * ed;
      const double* wx = pwx.value.data.data() + r * ed;
      for (std::size_t j = 0; j < ed; ++j) {
        wxg[j] += g * xv2[j];
        nodes_[x].grad[j] += g * wx[j];
      }
      double* whg = pwh.grad.data.data() + r * hd;
      const double* wh = pwh.value.data.data() + r * hd;
      for (std::size_t j = 0; j < hd; ++j) {
        whg[j] += g * hv2[j];
        nodes_[prev.h].grad[j] += g * wh[j];
      }
    }
  };
  return {h_out, c_out};
}

Tape::Node Tape::bce_loss(Node p, double label) {
  if (nodes_[p].value.size() != 1) throw std::invalid_argument("bce_loss: p must be scalar");
  if (label != 0.0 && label != 1.0) throw std::invalid_argument("bce_loss: label must be 0 or 1");
  double pc = std::min(std::max(nodes_[p].value[0], kBceEps), 1.0 - kBceEps);
  Tensor loss = Tensor::zeros({1});
  loss[0] = -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
  Node out = push(std::move(loss));
  nodes_[out].back = [this, out, p, pc, label]() {
    nodes_[p].grad[0] += nodes_[out].grad[0] * (pc - label) / (pc * (1.0 - pc));
  };
  return out;
}

double Tape::scalar(Node n) const {
  if (nodes_[n].value.size() != 1) throw std::invalid_argument("scalar: node is not scalar");
  return nodes_[n].value[0];
}

void Tape::backward(Node root) {
  if (nodes_[root].value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
  nodes_[root].grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back();
  }
}

void Adam::step(ParameterStore& params) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.push_back(Tensor::zeros(params.p(i).value.shape));
      v_.push_back(Tensor::zeros(params.p(i).value.shape));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter set changed mid-run");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.p(i);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      double g = p.grad[j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      p.value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p.zero_grad();
  }
}

GradCheckResult gradient_check(const std::function<double()>& run, ParameterStore& params, double eps) {
  if (eps <= 0) throw std::invalid_argument("gradient_check: eps must be positive");
  params.zero_grads();
  double base = run();
  if (!std::isfinite(base)) throw std::runtime_error("gradient_check: non-finite loss");

  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params.p(i).grad);

  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.p(i);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double saved = p.value[j];
      p.value[j] = saved + eps;
      params.zero_grads();
      double fp = run();
      p.value[j] = saved - eps;
      params.zero_grads();
      double fm = run();
      p.value[j] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("gradient_check: non-finite loss at " + p.name);
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[i][j];
      double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = p.name;
        result.worst_index = j;
      }
    }
  }
  return result;
}

}  // namespace mistake::nn
