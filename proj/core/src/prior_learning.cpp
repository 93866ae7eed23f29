#include "omad/prior_learning.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "omad/errors.hpp"

namespace omad {

void TrainingSet::validate() const {
  const int M = keypoint_count();
  for (std::size_t n = 0; n < instances.size(); ++n) {
    const auto& inst = instances[n];
    const std::string tag = "training instance " + std::to_string(n);
    if (inst.keypoints.rows() != M) throw ContractViolation(tag + " has the wrong keypoint count");
    if (!inst.keypoints.allFinite()) throw ContractViolation(tag + " has non-finite keypoints");
    if (inst.keypoints.colwise().mean().norm() > 1e-8) {
      throw ContractViolation(tag + " is not zero-centered");
    }
    if (static_cast<int>(inst.joint_params.size()) != tree.joint_count()) {
      throw ContractViolation(tag + " has the wrong joint parameter count");
    }
    for (int j = 0; j < tree.joint_count(); ++j) {
      const auto& p = inst.joint_params[static_cast<std::size_t>(j)];
      const bool is_free = tree.joint(j).type == JointType::Free;
      if (is_free != !p.has_value()) {
        throw ContractViolation(tag + ": joint parameters must be present exactly for 1-DoF joints");
      }
      if (p && std::abs(p->direction.norm() - 1.0) > 1e-9) {
        throw ContractViolation(tag + ": joint direction is not unit length");
      }
    }
  }
}

MatX TrainingSet::data_matrix() const {
  MatX X(3 * keypoint_count(), static_cast<Eigen::Index>(instances.size()));
  for (std::size_t n = 0; n < instances.size(); ++n) {
    X.col(static_cast<Eigen::Index>(n)) = flatten(instances[n].keypoints);
  }
  return X;
}

BasisFit learn_basis(const TrainingSet& train, int basis_count) {
  if (basis_count < 1) throw ContractViolation("basis count must be positive");
  const auto N = static_cast<int>(train.instances.size());
  if (N < basis_count) {
    throw InsufficientData("learn_basis needs at least " + std::to_string(basis_count) +
                           " instances, got " + std::to_string(N));
  }
  if (basis_count > 3 * train.keypoint_count()) {
    throw InsufficientData("basis count exceeds the shape dimension 3M");
  }

  const MatX X = train.data_matrix();
  Eigen::JacobiSVD<MatX> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);

  BasisFit out;
  MatX U = svd.matrixU().leftCols(basis_count);
  MatX coeffs = svd.singularValues().head(basis_count).asDiagonal() *
                svd.matrixV().leftCols(basis_count).transpose();
  for (int k = 0; k < basis_count; ++k) {
    Eigen::Index imax = 0;
    U.col(k).cwiseAbs().maxCoeff(&imax);
    if (U(imax, k) < 0.0) {
      U.col(k) *= -1.0;
      coeffs.row(k) *= -1.0;
    }
  }
  out.basis.matrix = std::move(U);
  out.singular_values = svd.singularValues();
  out.betas.reserve(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) out.betas.emplace_back(coeffs.col(n));
  out.reconstruction_error = (X - out.basis.matrix * coeffs).norm();
  return out;
}

JointLossTerms joint_loss_terms(const JointParamSet& pred, const JointParamSet& gt, double lambda,
                                const KinematicTree& tree) {
  if (static_cast<int>(pred.size()) != tree.joint_count() ||
      static_cast<int>(gt.size()) != tree.joint_count()) {
    throw ContractViolation("joint parameter sets do not match the tree");
  }
  JointLossTerms t;
  int n_dir = 0;
  int n_piv = 0;
  for (int j : tree.dof1_joints()) {
    const auto& p = pred[static_cast<std::size_t>(j)];
    const auto& g = gt[static_cast<std::size_t>(j)];
    if (!p || !g) throw ContractViolation("1-DoF joint is missing joint parameters");
    const double cos = std::clamp(
        p->direction.dot(g->direction) / (p->direction.norm() * g->direction.norm()), -1.0, 1.0);
    t.direction += 1.0 - cos;
    ++n_dir;
    if (tree.joint(j).type == JointType::Revolute) {
      t.pivot += (p->pivot - g->pivot).norm();
      ++n_piv;
    }
  }
  if (n_dir > 0) t.direction /= n_dir;
  if (n_piv > 0) t.pivot /= n_piv;
  t.total = t.direction + lambda * t.pivot;
  return t;
}

double joint_loss(const JointParamSet& pred, const JointParamSet& gt, double lambda,
                  const KinematicTree& tree) {
  return joint_loss_terms(pred, gt, lambda, tree).total;
}

double separation_loss(const Keypoints& keypoints, double margin) {
  if (!(margin > 0.0)) throw ContractViolation("separation margin must be positive");
  const Eigen::Index M = keypoints.rows();
  if (M < 2) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < M; ++i) {
    for (Eigen::Index j = i + 1; j < M; ++j) {
      const double gap = margin - (keypoints.row(i) - keypoints.row(j)).norm();
      if (gap > 0.0) sum += gap * gap;
    }
  }
  return sum / (0.5 * static_cast<double>(M) * static_cast<double>(M - 1));
}

double diameter(const Keypoints& keypoints) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < keypoints.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < keypoints.rows(); ++j) {
      d = std::max(d, (keypoints.row(i) - keypoints.row(j)).norm());
    }
  }
  return d;
}

JointFunctionWeights init_joint_function(int input_dim, int hidden, int output_dim,
                                         std::uint64_t seed) {
  if (input_dim < 1 || hidden < 1 || output_dim < 0) {
    throw ContractViolation("joint function dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto& m, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  JointFunctionWeights w;
  w.W1.resize(hidden, input_dim);
  w.b1.resize(hidden);
  w.W2.resize(output_dim, hidden);
  w.b2.resize(output_dim);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  fill(w.W1, s1);
  fill(w.b1, s1);
  fill(w.W2, s2);
  fill(w.b2, s2);
  return w;
}

namespace {

struct LossAndGrad {
  double direction = 0.0;
  double pivot = 0.0;
  JointFunctionWeights grad;
};

// Mean joint loss over the training set and its gradient with respect to the
// network weights (plain backprop through the two layers).
LossAndGrad evaluate(const JointFunctionWeights& w, const TrainingSet& train,
                     const std::vector<VecX>& betas, double lambda) {
  const KinematicTree& tree = train.tree;
  const auto N = static_cast<double>(betas.size());
  int n_rev = 0;
  for (int j : tree.dof1_joints()) n_rev += tree.joint(j).type == JointType::Revolute ? 1 : 0;
  const double inv_dir = 1.0 / std::max(1, tree.dof1_count());
  const double inv_piv = 1.0 / std::max(1, n_rev);

  LossAndGrad out;
  out.grad.W1 = MatX::Zero(w.W1.rows(), w.W1.cols());
  out.grad.b1 = VecX::Zero(w.b1.size());
  out.grad.W2 = MatX::Zero(w.W2.rows(), w.W2.cols());
  out.grad.b2 = VecX::Zero(w.b2.size());

  VecX g_raw(w.output_dim());
  for (std::size_t n = 0; n < betas.size(); ++n) {
    const JointFunctionEval e = joint_forward(w, betas[n]);
    g_raw.setZero();
    for (int slot = 0; slot < tree.dof1_count(); ++slot) {
      const int j = tree.dof1_joints()[static_cast<std::size_t>(slot)];
      const JointParams& gt = *train.instances[n].joint_params[static_cast<std::size_t>(j)];
      const Vec3 d = e.raw.segment<3>(6 * slot);
      const double norm = d.norm();
      const Vec3 u = d / norm;
      const double cos = u.dot(gt.direction);
      out.direction += (1.0 - cos) * inv_dir;
      g_raw.segment<3>(6 * slot) = -(gt.direction - cos * u) / norm * inv_dir;
      if (tree.joint(j).type == JointType::Revolute) {
        const Vec3 diff = e.raw.segment<3>(6 * slot + 3) - gt.pivot;
        const double dist = diff.norm();
        out.pivot += dist * inv_piv;
        if (dist > 0.0) g_raw.segment<3>(6 * slot + 3) = lambda * inv_piv * diff / dist;
      }
    }
    const VecX g_hidden = w.W2.transpose() * g_raw;
    const VecX g_pre = (e.pre.array() > 0.0).select(g_hidden, 0.0);
    out.grad.W2.noalias() += g_raw * e.hidden.transpose();
    out.grad.b2 += g_raw;
    out.grad.W1.noalias() += g_pre * betas[n].transpose();
    out.grad.b1 += g_pre;
  }
  out.direction /= N;
  out.pivot /= N;
  out.grad.W1 /= N;
  out.grad.b1 /= N;
  out.grad.W2 /= N;
  out.grad.b2 /= N;
  return out;
}

}  // namespace

JointFitResult fit_joint_function(const TrainingSet& train, const std::vector<VecX>& betas,
                                  const LearnConfig& cfg) {
  if (betas.size() != train.instances.size()) {
    throw ContractViolation("one shape parameter vector is required per training instance");
  }
  if (betas.empty()) throw InsufficientData("fit_joint_function needs at least one instance");
  if (!(cfg.lr > 0.0)) throw ContractViolation("learning rate must be positive");
  if (cfg.epochs < 0) throw ContractViolation("epoch count must be non-negative");

  const auto input_dim = static_cast<int>(betas.front().size());
  JointFitResult out;
  out.weights = init_joint_function(input_dim, cfg.hidden, 6 * train.tree.dof1_count(), cfg.seed);

  double beta_sq = 0.0;
  for (const VecX& b : betas) {
    if (b.size() != input_dim) throw ContractViolation("shape parameter vectors differ in length");
    beta_sq += b.squaredNorm();
  }
  out.beta_regularization = cfg.reg_weight * beta_sq / static_cast<double>(betas.size());

  JointFunctionWeights& w = out.weights;
  JointFunctionWeights v{MatX::Zero(w.W1.rows(), w.W1.cols()), VecX::Zero(w.b1.size()),
                         MatX::Zero(w.W2.rows(), w.W2.cols()), VecX::Zero(w.b2.size())};
  out.history.reserve(static_cast<std::size_t>(cfg.epochs) + 1);
  for (int epoch = 0;; ++epoch) {
    const LossAndGrad lg = evaluate(w, train, betas, cfg.lambda);
    LossRecord rec;
    rec.epoch = epoch;
    rec.direction = lg.direction;
    rec.pivot = lg.pivot;
    rec.joint = lg.direction + cfg.lambda * lg.pivot;
    rec.total = rec.joint + out.beta_regularization;
    if (!std::isfinite(rec.total)) {
      throw DivergenceError("joint function training diverged at epoch " + std::to_string(epoch),
                            epoch);
    }
    out.history.push_back(rec);
    if (epoch == cfg.epochs) break;

    // The pivot term is a plain distance, so its gradient never shrinks near
    // the optimum; the step has to decay for the iterates to settle.
    const double lr = cfg.lr * 0.5 * (1.0 + std::cos(kPi * epoch / cfg.epochs));
    v.W1 = cfg.momentum * v.W1 - lr * lg.grad.W1;
    v.b1 = cfg.momentum * v.b1 - lr * lg.grad.b1;
    v.W2 = cfg.momentum * v.W2 - lr * lg.grad.W2;
    v.b2 = cfg.momentum * v.b2 - lr * lg.grad.b2;
    w.W1 += v.W1;
    w.b1 += v.b1;
    w.W2 += v.W2;
    w.b2 += v.b2;
  }
  return out;
}

LearnedPrior learn_prior(const TrainingSet& train, const LearnConfig& cfg,
                         const std::string& category_name) {
  LearnedPrior out;
  out.basis_fit = learn_basis(train, cfg.basis_count);
  out.joint_fit = fit_joint_function(train, out.basis_fit.betas, cfg);

  VecX mean_beta = VecX::Zero(cfg.basis_count);
  for (const VecX& b : out.basis_fit.betas) mean_beta += b;
  mean_beta /= static_cast<double>(out.basis_fit.betas.size());

  OmadPrior& prior = out.prior;
  prior.category_name = category_name;
  prior.tree = train.tree;
  prior.basis = out.basis_fit.basis;
  prior.gamma = out.joint_fit.weights;
  prior.rest_states = rest_states(train.tree);
  prior.metadata.mean_beta = mean_beta;
  const Keypoints mean_shape = shape_apply(prior.basis, mean_beta);
  prior.metadata.data_diameter = diameter(mean_shape);
  prior.validate();

  out.margin = cfg.sep_margin > 0.0 ? cfg.sep_margin : 0.05 * prior.metadata.data_diameter;
  out.separation = separation_loss(mean_shape, out.margin);
  return out;
}

}  // namespace omad
