#include "pbn/params.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pbn/errors.hpp"

namespace pbn {

const char* param_field_name(ParamField f) {
  switch (f) {
    case ParamField::Alpha: return "alpha";
    case ParamField::TermWeight: return "weight";
    case ParamField::Design: return "design";
    case ParamField::Lambda: return "lambda";
    case ParamField::W1: return "w1";
    case ParamField::W2: return "w2";
  }
  return "?";
}

ParamLayout build_layout(const Network& net) {
  ParamLayout layout;
  std::map<int, std::size_t> seen;  // group -> representative layer
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    const Layer& layer = net.layers[k];
    if (seen.count(layer.param_group)) continue;
    seen.emplace(layer.param_group, k);
    auto add = [&](ParamField field, std::size_t term, std::size_t count,
                   const std::string& label) {
      ParamBlock b;
      b.group = layer.param_group;
      b.layer = k;
      b.field = field;
      b.term = term;
      b.offset = layout.total;
      b.count = count;
      b.label = label;
      layout.total += count;
      layout.blocks.push_back(std::move(b));
    };
    const std::string prefix = "layer" + std::to_string(k);
    if (const auto* g = std::get_if<GradientLayer>(&layer.op)) {
      if (g->alpha_learnable) add(ParamField::Alpha, 0, 1, prefix + ".alpha");
      for (std::size_t i = 0; i < g->terms.size(); ++i) {
        if (g->terms[i].weight_learnable) {
          add(ParamField::TermWeight, i, 1,
              prefix + ".term" + std::to_string(i) + ".weight");
        }
        if (g->terms[i].design_learnable) {
          add(ParamField::Design, i, g->terms[i].op.weighted_sum_size(),
              prefix + ".term" + std::to_string(i) + ".design");
        }
      }
    } else if (const auto* q = std::get_if<QuadraticProxLayer>(&layer.op)) {
      if (q->lambda_learnable) add(ParamField::Lambda, 0, 1, prefix + ".lambda");
    } else if (const auto* s = std::get_if<SmoothProxLayer>(&layer.op)) {
      if (s->lambda_learnable) add(ParamField::Lambda, 0, 1, prefix + ".lambda");
    } else if (const auto* r = std::get_if<InvertibleResidualLayer>(&layer.op)) {
      if (r->kernels_learnable) {
        add(ParamField::W1, 0, r->w1.kernels.numel(), prefix + ".w1");
        add(ParamField::W2, 0, r->w2.kernels.numel(), prefix + ".w2");
      }
    }
  }
  return layout;
}

std::vector<double> collect_params(const Network& net, const ParamLayout& layout) {
  std::vector<double> out(layout.total, 0.0);
  for (const auto& b : layout.blocks) {
    const Layer& layer = net.layers[b.layer];
    switch (b.field) {
      case ParamField::Alpha:
        out[b.offset] = std::get<GradientLayer>(layer.op).alpha;
        break;
      case ParamField::TermWeight:
        out[b.offset] = std::get<GradientLayer>(layer.op).terms[b.term].weight;
        break;
      case ParamField::Design: {
        const auto& coeffs =
            std::get<GradientLayer>(layer.op).terms[b.term].op.weighted_sum_coeffs();
        std::copy(coeffs.begin(), coeffs.end(), out.begin() + b.offset);
        break;
      }
      case ParamField::Lambda:
        if (const auto* q = std::get_if<QuadraticProxLayer>(&layer.op)) {
          out[b.offset] = q->lambda;
        } else {
          out[b.offset] = std::get<SmoothProxLayer>(layer.op).lambda;
        }
        break;
      case ParamField::W1: {
        const auto& k = std::get<InvertibleResidualLayer>(layer.op).w1.kernels;
        for (std::size_t i = 0; i < b.count; ++i) out[b.offset + i] = k[i].real();
        break;
      }
      case ParamField::W2: {
        const auto& k = std::get<InvertibleResidualLayer>(layer.op).w2.kernels;
        for (std::size_t i = 0; i < b.count; ++i) out[b.offset + i] = k[i].real();
        break;
      }
    }
  }
  return out;
}

Network with_params(const Network& net, const ParamLayout& layout,
                    const std::vector<double>& params, bool refresh_certificates,
                    int sigma_iters, std::uint64_t sigma_seed) {
  if (params.size() != layout.total) {
    raise(ErrorKind::Validation, "parameter vector length mismatch");
  }
  Network out = net;
  std::vector<bool> curvature_dirty(out.layers.size(), false);
  std::vector<bool> lipschitz_dirty(out.layers.size(), false);
  for (const auto& b : layout.blocks) {
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
      Layer& layer = out.layers[k];
      if (layer.param_group != b.group) continue;
      switch (b.field) {
        case ParamField::Alpha:
          std::get<GradientLayer>(layer.op).alpha = params[b.offset];
          break;
        case ParamField::TermWeight:
          std::get<GradientLayer>(layer.op).terms[b.term].weight = params[b.offset];
          curvature_dirty[k] = true;
          break;
        case ParamField::Design: {
          auto& term = std::get<GradientLayer>(layer.op).terms[b.term];
          std::vector<double> coeffs(params.begin() + b.offset,
                                     params.begin() + b.offset + b.count);
          term.op = term.op.with_weighted_sum_coeffs(std::move(coeffs));
          curvature_dirty[k] = true;
          break;
        }
        case ParamField::Lambda:
          if (auto* q = std::get_if<QuadraticProxLayer>(&layer.op)) {
            q->lambda = params[b.offset];
          } else {
            std::get<SmoothProxLayer>(layer.op).lambda = params[b.offset];
          }
          break;
        case ParamField::W1: {
          auto& kern = std::get<InvertibleResidualLayer>(layer.op).w1.kernels;
          for (std::size_t i = 0; i < b.count; ++i) {
            kern[i] = cdouble(params[b.offset + i], 0.0);
          }
          lipschitz_dirty[k] = true;
          break;
        }
        case ParamField::W2: {
          auto& kern = std::get<InvertibleResidualLayer>(layer.op).w2.kernels;
          for (std::size_t i = 0; i < b.count; ++i) {
            kern[i] = cdouble(params[b.offset + i], 0.0);
          }
          lipschitz_dirty[k] = true;
          break;
        }
      }
    }
  }
  if (refresh_certificates) {
    // Layers of one group stay identical, so each group is estimated once.
    std::map<int, double> curvature_by_group, lipschitz_by_group;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
      const int group = out.layers[k].param_group;
      if (curvature_dirty[k]) {
        auto& g = std::get<GradientLayer>(out.layers[k].op);
        auto it = curvature_by_group.find(group);
        if (it == curvature_by_group.end()) {
          it = curvature_by_group
                   .emplace(group, gradient_curvature_estimate(g, sigma_iters, sigma_seed))
                   .first;
        }
        g.curvature_bound = it->second;
      }
      if (lipschitz_dirty[k]) {
        auto& r = std::get<InvertibleResidualLayer>(out.layers[k].op);
        auto it = lipschitz_by_group.find(group);
        if (it == lipschitz_by_group.end()) {
          it = lipschitz_by_group
                   .emplace(group, residual_lipschitz_estimate(r, sigma_iters, sigma_seed))
                   .first;
        }
        r.certified_bound = it->second;
      }
    }
  }
  return out;
}

std::vector<double> flatten_grads(const Network& net, const ParamLayout& layout,
                                  const GradientReport& report) {
  if (report.layer_grads.size() != net.layers.size()) {
    raise(ErrorKind::Validation, "gradient report does not match the network");
  }
  std::vector<double> out(layout.total, 0.0);
  for (const auto& b : layout.blocks) {
    for (std::size_t k = net.layers.size(); k-- > 0;) {
      if (net.layers[k].param_group != b.group) continue;
      const LayerGrads& g = report.layer_grads[k];
      switch (b.field) {
        case ParamField::Alpha:
          if (!g.alpha) raise(ErrorKind::Validation, "missing alpha gradient: " + b.label);
          out[b.offset] += *g.alpha;
          break;
        case ParamField::TermWeight:
          if (g.term_weights.size() <= b.term) {
            raise(ErrorKind::Validation, "missing weight gradient: " + b.label);
          }
          out[b.offset] += g.term_weights[b.term];
          break;
        case ParamField::Design: {
          if (g.design.size() <= b.term || g.design[b.term].size() != b.count) {
            raise(ErrorKind::Validation, "missing design gradient: " + b.label);
          }
          for (std::size_t i = 0; i < b.count; ++i) out[b.offset + i] += g.design[b.term][i];
          break;
        }
        case ParamField::Lambda:
          if (!g.lambda) raise(ErrorKind::Validation, "missing lambda gradient: " + b.label);
          out[b.offset] += *g.lambda;
          break;
        case ParamField::W1: {
          if (!g.w1) raise(ErrorKind::Validation, "missing kernel gradient: " + b.label);
          for (std::size_t i = 0; i < b.count; ++i) out[b.offset + i] += (*g.w1)[i].real();
          break;
        }
        case ParamField::W2: {
          if (!g.w2) raise(ErrorKind::Validation, "missing kernel gradient: " + b.label);
          for (std::size_t i = 0; i < b.count; ++i) out[b.offset + i] += (*g.w2)[i].real();
          break;
        }
      }
    }
  }
  return out;
}

double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace pbn
