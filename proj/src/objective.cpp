#include "pbrf/objective.hpp"

#include <cmath>

#include "pbrf/error.hpp"

namespace pbrf {

const char* to_string(ObjectiveTag tag) {
  switch (tag) {
    case ObjectiveTag::cold_downweighted: return "cold_downweighted";
    case ObjectiveTag::warm_downweighted: return "warm_downweighted";
    case ObjectiveTag::proximal: return "proximal";
    case ObjectiveTag::proximal_bregman: return "proximal_bregman";
    case ObjectiveTag::linearized_proximal_bregman: return "linearized_proximal_bregman";
  }
  return "unknown";
}

ObjectiveTag objective_tag_from_string(const std::string& name) {
  for (auto tag : {ObjectiveTag::cold_downweighted, ObjectiveTag::warm_downweighted, ObjectiveTag::proximal,
                   ObjectiveTag::proximal_bregman, ObjectiveTag::linearized_proximal_bregman})
    if (name == to_string(tag)) return tag;
  throw Error(ErrorKind::configuration, "unknown objective tag '" + name + "'");
}

namespace kernel {

ForwardCache slice(const ForwardCache& cache, std::span<const int> rows) {
  ForwardCache out;
  const auto B = static_cast<Eigen::Index>(rows.size());
  auto take = [&](const Matrix& M) {
    Matrix S(M.rows(), B);
    for (Eigen::Index j = 0; j < B; ++j) S.col(j) = M.col(rows[j]);
    return S;
  };
  out.pre.reserve(cache.pre.size());
  out.post.reserve(cache.post.size());
  for (const auto& M : cache.pre) out.pre.push_back(take(M));
  for (const auto& M : cache.post) out.post.push_back(take(M));
  return out;
}

}  // namespace kernel

namespace {

bool needs_anchor(ObjectiveTag tag) {
  return tag == ObjectiveTag::proximal || tag == ObjectiveTag::proximal_bregman ||
         tag == ObjectiveTag::linearized_proximal_bregman;
}

std::vector<int> rows_of(const Dataset& data, const std::vector<std::int64_t>& ids) {
  std::vector<int> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(static_cast<int>(data.row_of(id)));
  return rows;
}

}  // namespace

void Objective::validate(const NetworkSpec& spec, const Dataset& data) const {
  if (!std::isfinite(epsilon)) throw Error(ErrorKind::configuration, "epsilon must be finite");
  if (!(damping >= 0.0)) throw Error(ErrorKind::configuration, "damping must be nonnegative");
  for (auto id : removed) data.row_of(id);
  if (needs_anchor(tag)) {
    if (!anchor)
      throw Error(ErrorKind::configuration, std::string("objective '") + to_string(tag) + "' needs an anchor");
    if (anchor->params.size() != spec.param_count())
      throw Error(ErrorKind::shape, "anchor length does not match network");
    if (anchor->cache.outputs().cols() != data.size())
      throw Error(ErrorKind::shape, "anchor cache was built for a different dataset");
  }
  if (tag == ObjectiveTag::linearized_proximal_bregman && !anchor_removed_grad)
    throw Error(ErrorKind::configuration, "linearized objective needs the removed-example gradient at the anchor");
}

std::shared_ptr<const AnchorState> make_anchor(const ParamVector& params, const NetworkSpec& spec,
                                               const Dataset& data) {
  spec.validate();
  data.require_nonempty();
  if (params.size() != spec.param_count()) throw Error(ErrorKind::shape, "anchor length does not match network");
  auto state = std::make_shared<AnchorState>();
  state->params = params;
  state->cache = kernel::forward(spec, params, data.all_inputs_columns());
  return state;
}

Objective make_objective(ObjectiveTag tag, const NetworkSpec& spec, const Dataset& data,
                         std::vector<std::int64_t> removed, std::optional<double> epsilon,
                         double damping, std::shared_ptr<const AnchorState> anchor) {
  data.require_nonempty();
  Objective obj;
  obj.tag = tag;
  obj.epsilon = epsilon.value_or(1.0 / static_cast<double>(data.size()));
  obj.removed = std::move(removed);
  obj.damping = damping;
  obj.anchor = std::move(anchor);
  if (tag == ObjectiveTag::linearized_proximal_bregman && obj.anchor) {
    const auto rows = rows_of(data, obj.removed);
    if (rows.empty()) {
      obj.anchor_removed_grad = ParamVector::Zero(spec.param_count());
    } else {
      const auto cache = kernel::forward(spec, obj.anchor->params, data.batch_inputs(rows));
      obj.anchor_removed_grad = kernel::vjp(
          spec, obj.anchor->params, cache,
          loss_output_grads(spec.loss, cache.outputs(), data.batch_targets(rows, spec.loss)));
    }
  }
  obj.validate(spec, data);
  return obj;
}

ObjectiveValue evaluate_on_rows(const Objective& obj, const ParamVector& params, const NetworkSpec& spec,
                                const Dataset& data, std::span<const int> rows, bool with_grad) {
  if (rows.empty()) throw Error(ErrorKind::empty_data, "objective evaluated on an empty batch");
  if (params.size() != spec.param_count()) throw Error(ErrorKind::shape, "parameter length does not match network");
  const double B = static_cast<double>(rows.size());
  ObjectiveValue out;
  if (with_grad) out.grad = ParamVector::Zero(params.size());

  const TargetBatch targets = data.batch_targets(rows, spec.loss);
  const ParamVector* anchor = obj.anchor ? &obj.anchor->params : nullptr;

  switch (obj.tag) {
    case ObjectiveTag::cold_downweighted:
    case ObjectiveTag::warm_downweighted:
    case ObjectiveTag::proximal: {
      const auto cache = kernel::forward(spec, params, data.batch_inputs(rows));
      out.value = loss_values(spec.loss, cache.outputs(), targets).sum() / B +
                  0.5 * spec.l2_strength * params.squaredNorm();
      if (with_grad)
        out.grad = kernel::vjp(spec, params, cache, loss_output_grads(spec.loss, cache.outputs(), targets) / B) +
                   spec.l2_strength * params;
      break;
    }
    case ObjectiveTag::proximal_bregman: {
      const auto cache = kernel::forward(spec, params, data.batch_inputs(rows));
      Matrix ref(spec.output_dim(), static_cast<Eigen::Index>(rows.size()));
      for (std::size_t j = 0; j < rows.size(); ++j) ref.col(j) = obj.anchor->cache.outputs().col(rows[j]);
      const Matrix& Y = cache.outputs();
      const Matrix ref_grad = loss_output_grads(spec.loss, ref, targets);
      const Vector div = loss_values(spec.loss, Y, targets) - loss_values(spec.loss, ref, targets) -
                         (ref_grad.array() * (Y - ref).array()).colwise().sum().transpose().matrix();
      const ParamVector delta = params - *anchor;
      out.value = div.sum() / B + 0.5 * spec.l2_strength * delta.squaredNorm();
      if (with_grad)
        out.grad = kernel::vjp(spec, params, cache, (loss_output_grads(spec.loss, Y, targets) - ref_grad) / B) +
                   spec.l2_strength * delta;
      break;
    }
    case ObjectiveTag::linearized_proximal_bregman: {
      const auto cache = kernel::slice(obj.anchor->cache, rows);
      const ParamVector delta = params - *anchor;
      const Matrix U = kernel::jvp(spec, *anchor, cache, delta);
      const Matrix HU = apply_output_hessian(spec.loss, cache.outputs(), U);
      out.value = 0.5 * (U.array() * HU.array()).sum() / B + 0.5 * spec.l2_strength * delta.squaredNorm();
      if (with_grad) out.grad = kernel::vjp(spec, *anchor, cache, HU / B) + spec.l2_strength * delta;
      break;
    }
  }

  // Downweighted removed examples.
  if (!obj.removed.empty() && obj.epsilon != 0.0) {
    if (obj.tag == ObjectiveTag::linearized_proximal_bregman) {
      out.value -= obj.epsilon * obj.anchor_removed_grad->dot(params);
      if (with_grad) out.grad -= obj.epsilon * *obj.anchor_removed_grad;
    } else {
      const auto removed_rows = rows_of(data, obj.removed);
      const auto cache = kernel::forward(spec, params, data.batch_inputs(removed_rows));
      const TargetBatch rt = data.batch_targets(removed_rows, spec.loss);
      out.value -= obj.epsilon * loss_values(spec.loss, cache.outputs(), rt).sum();
      if (with_grad)
        out.grad -= obj.epsilon * kernel::vjp(spec, params, cache, loss_output_grads(spec.loss, cache.outputs(), rt));
    }
  }

  if (needs_anchor(obj.tag) && obj.damping != 0.0) {
    const ParamVector delta = params - *anchor;
    out.value += 0.5 * obj.damping * delta.squaredNorm();
    if (with_grad) out.grad += obj.damping * delta;
  }
  return out;
}

double evaluate_objective(const Objective& obj, const ParamVector& params, const NetworkSpec& spec,
                          const Dataset& data) {
  spec.validate();
  obj.validate(spec, data);
  const auto rows = data.all_rows();
  return evaluate_on_rows(obj, params, spec, data, rows, false).value;
}

ParamVector gradient_of_objective(const Objective& obj, const ParamVector& params, const NetworkSpec& spec,
                                  const Dataset& data) {
  spec.validate();
  obj.validate(spec, data);
  const auto rows = data.all_rows();
  return evaluate_on_rows(obj, params, spec, data, rows, true).grad;
}

double bregman_term(const ParamVector& params, const ParamVector& anchor, const NetworkSpec& spec,
                    const Dataset& data) {
  spec.validate();
  data.require_nonempty();
  const Matrix X = data.all_inputs_columns();
  const TargetBatch targets = data.all_targets(spec.loss);
  const Matrix Y = kernel::forward(spec, params, X).outputs();
  const Matrix ref = kernel::forward(spec, anchor, X).outputs();
  const Matrix ref_grad = loss_output_grads(spec.loss, ref, targets);
  const Vector div = loss_values(spec.loss, Y, targets) - loss_values(spec.loss, ref, targets) -
                     (ref_grad.array() * (Y - ref).array()).colwise().sum().transpose().matrix();
  return div.mean();
}

}  // namespace pbrf
