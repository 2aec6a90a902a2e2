#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cegan/autodiff.hpp"
#include "cegan/net.hpp"
#include "cegan/tensor.hpp"

namespace cegan {

/// Floor applied inside every log-bearing objective.
inline constexpr double kLogClamp = 1e-12;

enum class MutationKind : std::uint8_t { Minimax = 0, Heuristic = 1, LeastSquares = 2 };

inline const char* mutation_kind_name(MutationKind k) {
  switch (k) {
    case MutationKind::Minimax: return "minimax";
    case MutationKind::Heuristic: return "heuristic";
    case MutationKind::LeastSquares: return "least_squares";
  }
  return "?";
}

inline NodeId clamped_log(Tape& tape, NodeId x) {
  return tape.log(tape.clamp_min(x, kLogClamp));
}

inline NodeId one_minus(Tape& tape, NodeId x) {
  const Tensor& v = tape.value(x);
  return tape.sub(tape.constant(Tensor::full(v.rows(), v.cols(), 1.0)), x);
}

/// Discriminator loss graph. The real batch and all per-parent fake batches
/// are stacked into one input so every parameter leaf feeds exactly one
/// matmul; the real/fake split is carried by 0/1 masks. Normalization is by
/// the real-batch row count on both terms.
struct DiscLossGraph {
  NodeId loss = kNoNode;
  MlpOnTape disc;
};

inline DiscLossGraph d_loss_graph(Tape& tape, const MlpSpec& disc_spec,
                                  std::span<const double> disc_params,
                                  const Tensor& real,
                                  const std::vector<const Tensor*>& fakes,
                                  bool track_disc_params) {
  if (fakes.empty()) throw std::invalid_argument("d_loss: no fake batches");
  std::size_t fake_rows = 0;
  for (const Tensor* f : fakes) {
    if (f->cols() != real.cols())
      throw std::invalid_argument("d_loss: fake column count differs from real");
    fake_rows += f->rows();
  }
  if (fake_rows != real.rows())
    throw std::invalid_argument("d_loss: fake rows (" + std::to_string(fake_rows) +
                                ") must total the real batch size (" +
                                std::to_string(real.rows()) + ")");
  const std::size_t m = real.rows();
  std::vector<const Tensor*> parts;
  parts.push_back(&real);
  for (const Tensor* f : fakes) parts.push_back(f);
  Tensor stacked = Tensor::vstack(parts);

  Tensor mask_real(2 * m, 1), mask_fake(2 * m, 1);
  for (std::size_t i = 0; i < m; ++i) mask_real[i] = 1.0;
  for (std::size_t i = m; i < 2 * m; ++i) mask_fake[i] = 1.0;

  DiscLossGraph g;
  NodeId input = tape.constant(std::move(stacked), "d_input");
  g.disc = mlp_forward(tape, disc_spec, disc_params, input, track_disc_params, "d_");
  NodeId d_all = tape.sigmoid(g.disc.raw_output);
  NodeId real_term =
      tape.sum(tape.mul(clamped_log(tape, d_all), tape.constant(std::move(mask_real))));
  NodeId fake_term = tape.sum(tape.mul(clamped_log(tape, one_minus(tape, d_all)),
                                       tape.constant(std::move(mask_fake))));
  const double scale = -1.0 / double(m);
  g.loss = tape.add(tape.scalar_mul(scale, real_term), tape.scalar_mul(scale, fake_term));
  return g;
}

/// Generator mutation objective over D(G(z)) values.
inline NodeId mutation_loss_node(Tape& tape, MutationKind kind, NodeId d_fake) {
  switch (kind) {
    case MutationKind::Minimax:
      return tape.scalar_mul(0.5, tape.mean(clamped_log(tape, one_minus(tape, d_fake))));
    case MutationKind::Heuristic:
      return tape.scalar_mul(-0.5, tape.mean(clamped_log(tape, d_fake)));
    case MutationKind::LeastSquares: {
      const Tensor& v = tape.value(d_fake);
      NodeId ones = tape.constant(Tensor::full(v.rows(), v.cols(), 1.0));
      return tape.mean(tape.square(tape.sub(d_fake, ones)));
    }
  }
  throw std::logic_error("mutation_loss_node: bad kind");
}

/// Full mutation graph: tracked generator feeding a frozen discriminator.
struct MutationGraph {
  NodeId loss = kNoNode;
  MlpOnTape gen;
  NodeId d_fake = kNoNode;
};

inline MutationGraph mutation_graph(Tape& tape, const MlpSpec& gen_spec,
                                    std::span<const double> gen_params,
                                    const MlpSpec& disc_spec,
                                    std::span<const double> disc_params,
                                    const Tensor& noise, MutationKind kind) {
  MutationGraph g;
  NodeId z = tape.constant(noise, "z");
  g.gen = mlp_forward(tape, gen_spec, gen_params, z, /*track_params=*/true, "g_");
  MlpOnTape disc = mlp_forward(tape, disc_spec, disc_params, g.gen.output,
                               /*track_params=*/false, "d_");
  g.d_fake = tape.sigmoid(disc.raw_output);
  g.loss = mutation_loss_node(tape, kind, g.d_fake);
  return g;
}

/// Per-row imitation targets: whichever parent output the discriminator
/// scores strictly higher; ties fall back to the basis parent.
inline Tensor distillation_targets(const Tensor& x_out, const Tensor& y_out,
                                   const Tensor& c_x, const Tensor& c_y,
                                   bool basis_is_x) {
  if (!x_out.same_shape(y_out))
    throw std::invalid_argument("distillation_targets: parent output shapes differ");
  if (c_x.rows() != x_out.rows() || c_y.rows() != y_out.rows())
    throw std::invalid_argument("distillation_targets: score row count mismatch");
  Tensor target(x_out.rows(), x_out.cols());
  for (std::size_t r = 0; r < x_out.rows(); ++r) {
    const bool take_x = c_x[r] > c_y[r] || (!(c_y[r] > c_x[r]) && basis_is_x);
    const double* src = take_x ? x_out.row_ptr(r) : y_out.row_ptr(r);
    double* dst = target.row_ptr(r);
    for (std::size_t j = 0; j < x_out.cols(); ++j) dst[j] = src[j];
  }
  return target;
}

/// Mean squared distance between the child's outputs and fixed targets.
/// `normalized` divides by the row count so the step size is independent of
/// the batch size; pass false for the raw summed form.
inline NodeId distillation_loss_node(Tape& tape, NodeId child_out,
                                     const Tensor& targets, bool normalized = true) {
  const Tensor& v = tape.value(child_out);
  if (v.rows() != targets.rows() || v.cols() != targets.cols())
    throw std::invalid_argument("distillation_loss: child rows " + v.shape_str() +
                                " vs target rows " + targets.shape_str());
  NodeId t = tape.constant(targets, "distill_target");
  NodeId total = tape.sum(tape.square(tape.sub(child_out, t)));
  if (!normalized) return total;
  return tape.scalar_mul(1.0 / double(targets.rows()), total);
}

/// Gradient-penalty graph: a dedicated input-gradient pass built from the
/// network's own weights, so the penalty stays differentiable w.r.t. the
/// discriminator parameters. Relu derivative masks are detached constants
/// (their derivative is zero almost everywhere); the tanh derivative stays
/// on the tape.
struct GpGraph {
  NodeId penalty = kNoNode;
  MlpOnTape disc;
  NodeId input_grad = kNoNode;  // batch x d_in rows of grad_x C(x)
};

inline GpGraph gp_term_graph(Tape& tape, const MlpSpec& disc_spec,
                             std::span<const double> disc_params,
                             const Tensor& x_hat, double lambda,
                             bool track_disc_params = true) {
  if (lambda < 0.0) throw std::invalid_argument("gp_term: lambda must be >= 0");
  GpGraph g;
  NodeId input = tape.constant(x_hat, "gp_input");
  g.disc = mlp_forward(tape, disc_spec, disc_params, input, track_disc_params, "gp_");
  const std::size_t batch = x_hat.rows();
  const std::size_t layers = disc_spec.layer_count();

  NodeId upstream = tape.constant(Tensor::full(batch, 1, 1.0));
  for (std::size_t l = layers; l-- > 0;) {
    NodeId u = tape.matmul(upstream, tape.transpose(g.disc.weights[l]));
    if (l == 0) {
      g.input_grad = u;
      break;
    }
    NodeId deriv;
    if (disc_spec.hidden_activation == Activation::Relu) {
      deriv = tape.step_mask(g.disc.preacts[l - 1]);
    } else {
      const Tensor& h = tape.value(g.disc.hiddens[l - 1]);
      NodeId ones = tape.constant(Tensor::full(h.rows(), h.cols(), 1.0));
      deriv = tape.sub(ones, tape.square(g.disc.hiddens[l - 1]));
    }
    upstream = tape.mul(u, deriv);
  }

  NodeId sq_norm = tape.row_sum(tape.square(g.input_grad));
  NodeId norm = tape.sqrt(tape.clamp_min(sq_norm, 1e-24));
  NodeId ones = tape.constant(Tensor::full(batch, 1, 1.0));
  g.penalty = tape.scalar_mul(lambda, tape.mean(tape.square(tape.sub(norm, ones))));
  return g;
}

/// Interpolate real and fake rows with per-row uniform weights.
inline Tensor gp_interpolate(const Tensor& real, const Tensor& fake, const Tensor& u) {
  if (!real.same_shape(fake))
    throw std::invalid_argument("gp_interpolate: real and fake shapes differ");
  if (u.rows() != real.rows() || u.cols() != 1)
    throw std::invalid_argument("gp_interpolate: need one weight per row");
  Tensor out(real.rows(), real.cols());
  for (std::size_t r = 0; r < real.rows(); ++r) {
    const double w = u[r];
    const double* a = real.row_ptr(r);
    const double* b = fake.row_ptr(r);
    double* dst = out.row_ptr(r);
    for (std::size_t j = 0; j < real.cols(); ++j)
      dst[j] = w * a[j] + (1.0 - w) * b[j];
  }
  return out;
}

}  // namespace cegan
