#include "drtep/model_ir.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace drtep {

VarId ModelIR::add_var(const std::string& name, VarKind kind, double lb, double ub) {
  if (name.empty() || name.find(' ') != std::string::npos)
    throw std::invalid_argument("variable name empty or contains whitespace: '" + name + "'");
  if (var_index_.count(name)) throw std::invalid_argument("duplicate variable name: " + name);
  if (lb > ub) throw std::invalid_argument("variable " + name + " has lb > ub");
  if (kind == VarKind::Binary) {
    lb = std::max(lb, 0.0);
    ub = std::min(ub, 1.0);
  }
  vars_.push_back({name, kind, lb, ub});
  VarId id = VarId(vars_.size()) - 1;
  var_index_.emplace(name, id);
  return id;
}

static std::vector<LinTerm> compress(const std::vector<LinTerm>& terms, int nvars) {
  std::map<VarId, double> acc;
  for (const auto& t : terms) {
    if (t.var < 0 || t.var >= nvars) throw std::out_of_range("row references unknown variable id");
    acc[t.var] += t.coef;
  }
  std::vector<LinTerm> out;
  out.reserve(acc.size());
  for (auto& [v, c] : acc)
    if (c != 0.0) out.push_back({v, c});
  return out;
}

RowId ModelIR::add_row(const std::string& name, const LinExpr& lhs, RowSense sense, double rhs,
                       const std::string& tag) {
  if (name.empty() || name.find(' ') != std::string::npos)
    throw std::invalid_argument("row name empty or contains whitespace: '" + name + "'");
  if (row_index_.count(name)) throw std::invalid_argument("duplicate row name: " + name);
  if (tag.empty()) throw std::invalid_argument("row " + name + " has no provenance tag");
  LinearRow row;
  row.name = name;
  row.sense = sense;
  row.rhs = rhs - lhs.constant;
  row.terms = compress(lhs.terms, num_vars());
  row.tag = tag;
  rows_.push_back(std::move(row));
  RowId id = RowId(rows_.size()) - 1;
  row_index_.emplace(name, id);
  return id;
}

void ModelIR::add_row_bilinear(RowId row, VarId a, VarId b, double coef) {
  if (row < 0 || row >= num_rows()) throw std::out_of_range("bilinear term on unknown row");
  rows_[size_t(row)].bilinear.push_back({a, b, coef});
}

void ModelIR::set_objective(ObjSense sense, const LinExpr& expr) {
  obj_sense_ = sense;
  obj_terms_ = compress(expr.terms, num_vars());
  obj_constant_ = expr.constant;
}

void ModelIR::add_obj_bilinear(VarId a, VarId b, double coef) {
  obj_bilinear_.push_back({a, b, coef});
}

int ModelIR::num_binaries() const {
  int n = 0;
  for (const auto& v : vars_)
    if (v.kind == VarKind::Binary) ++n;
  return n;
}

bool ModelIR::has_bilinear() const {
  if (!obj_bilinear_.empty()) return true;
  for (const auto& r : rows_)
    if (!r.bilinear.empty()) return true;
  return false;
}

VarId ModelIR::find_var(const std::string& name) const {
  auto it = var_index_.find(name);
  return it == var_index_.end() ? -1 : it->second;
}

int ModelIR::count_rows_with_tag(const std::string& tag) const {
  int n = 0;
  for (const auto& r : rows_)
    if (r.tag == tag) ++n;
  return n;
}

double ModelIR::eval_objective(const std::vector<double>& x) const {
  double v = obj_constant_;
  for (const auto& t : obj_terms_) v += t.coef * x[size_t(t.var)];
  for (const auto& b : obj_bilinear_) v += b.coef * x[size_t(b.a)] * x[size_t(b.b)];
  return v;
}

double ModelIR::eval_row(RowId r, const std::vector<double>& x) const {
  const auto& row = rows_[size_t(r)];
  double v = 0;
  for (const auto& t : row.terms) v += t.coef * x[size_t(t.var)];
  for (const auto& b : row.bilinear) v += b.coef * x[size_t(b.a)] * x[size_t(b.b)];
  return v;
}

std::vector<RowViolation> verify_solution(const ModelIR& ir, const std::vector<double>& x,
                                          double tol) {
  std::vector<RowViolation> out;
  if (x.size() != size_t(ir.num_vars()))
    throw std::invalid_argument("verify_solution: point dimension mismatch");
  for (VarId v = 0; v < ir.num_vars(); ++v) {
    const auto& var = ir.var(v);
    double viol = std::max(var.lb - x[size_t(v)], x[size_t(v)] - var.ub);
    double scale = 1.0 + std::max(std::abs(var.lb) == kInf ? 0.0 : std::abs(var.lb),
                                  std::abs(var.ub) == kInf ? 0.0 : std::abs(var.ub));
    if (viol > tol * scale) out.push_back({-1 - v, viol});  // negative ids mark bound breaks
    if (var.kind == VarKind::Binary && std::abs(x[size_t(v)] - std::round(x[size_t(v)])) > 1e-5)
      out.push_back({-1 - v, std::abs(x[size_t(v)] - std::round(x[size_t(v)]))});
  }
  for (RowId r = 0; r < ir.num_rows(); ++r) {
    const auto& row = ir.row(r);
    double act = ir.eval_row(r, x);
    double viol = 0;
    switch (row.sense) {
      case RowSense::LE: viol = act - row.rhs; break;
      case RowSense::GE: viol = row.rhs - act; break;
      case RowSense::EQ: viol = std::abs(act - row.rhs); break;
    }
    // scale mildly with the row's magnitude so big-M rows don't trip on fp noise
    double mag = std::abs(row.rhs);
    for (const auto& t : row.terms) mag = std::max(mag, std::abs(t.coef * x[size_t(t.var)]));
    if (viol > tol * (1.0 + mag * 1e-3)) out.push_back({r, viol});
  }
  return out;
}

}  // namespace drtep
