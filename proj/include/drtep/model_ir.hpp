#pragma once
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

namespace drtep {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarKind { Continuous, Binary };
enum class RowSense { LE, GE, EQ };
enum class ObjSense { Min, Max };

using VarId = int;
using RowId = int;

struct LinTerm {
  VarId var;
  double coef;
};

// Small affine expression helper so constraint emitters read like the algebra.
struct LinExpr {
  std::vector<LinTerm> terms;
  double constant = 0.0;

  LinExpr() = default;
  /*implicit*/ LinExpr(double c) : constant(c) {}

  LinExpr& add(VarId v, double c) {
    if (c != 0.0) terms.push_back({v, c});
    return *this;
  }
  LinExpr& operator+=(const LinExpr& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
  }
  LinExpr& operator-=(const LinExpr& o) {
    for (const auto& t : o.terms) terms.push_back({t.var, -t.coef});
    constant -= o.constant;
    return *this;
  }
  LinExpr& operator*=(double s) {
    for (auto& t : terms) t.coef *= s;
    constant *= s;
    return *this;
  }
};

inline LinExpr term(VarId v, double c = 1.0) {
  LinExpr e;
  e.add(v, c);
  return e;
}

struct Variable {
  std::string name;
  VarKind kind;
  double lb, ub;
};

struct BilinearTerm {
  VarId a, b;
  double coef;
};

struct LinearRow {
  std::string name;
  RowSense sense;
  double rhs;
  std::vector<LinTerm> terms;          // compressed: unique vars, sorted by id
  std::vector<BilinearTerm> bilinear;  // non-empty only in passthrough mode
  std::string tag;                     // constraint-family provenance, never empty
};

// Solver-agnostic model container. Everything the planner, dispatch and toolkit emitters
// produce lands here; backends consume it read-only.
class ModelIR {
public:
  VarId add_var(const std::string& name, VarKind kind, double lb, double ub);
  // returns the row id; terms are compressed (duplicates merged, zeros dropped) and the
  // expression constant is folded into the rhs.
  RowId add_row(const std::string& name, const LinExpr& lhs, RowSense sense, double rhs,
                const std::string& tag);
  void add_row_bilinear(RowId row, VarId a, VarId b, double coef);

  void set_objective(ObjSense sense, const LinExpr& expr);
  void add_obj_bilinear(VarId a, VarId b, double coef);

  int num_vars() const { return int(vars_.size()); }
  int num_rows() const { return int(rows_.size()); }
  int num_binaries() const;
  bool has_bilinear() const;

  const Variable& var(VarId v) const { return vars_[size_t(v)]; }
  Variable& var_mutable(VarId v) { return vars_[size_t(v)]; }
  const LinearRow& row(RowId r) const { return rows_[size_t(r)]; }
  const std::vector<Variable>& vars() const { return vars_; }
  const std::vector<LinearRow>& rows() const { return rows_; }

  ObjSense obj_sense() const { return obj_sense_; }
  const std::vector<LinTerm>& obj_terms() const { return obj_terms_; }
  const std::vector<BilinearTerm>& obj_bilinear() const { return obj_bilinear_; }
  double obj_constant() const { return obj_constant_; }

  VarId find_var(const std::string& name) const;  // -1 if absent
  int count_rows_with_tag(const std::string& tag) const;

  double eval_objective(const std::vector<double>& x) const;
  double eval_row(RowId r, const std::vector<double>& x) const;

private:
  std::vector<Variable> vars_;
  std::vector<LinearRow> rows_;
  std::unordered_map<std::string, VarId> var_index_;
  std::unordered_map<std::string, RowId> row_index_;
  ObjSense obj_sense_ = ObjSense::Min;
  std::vector<LinTerm> obj_terms_;
  std::vector<BilinearTerm> obj_bilinear_;
  double obj_constant_ = 0.0;
};

struct RowViolation {
  RowId row;
  double amount;  // positive = infeasible by this much (absolute)
};

// Re-checks a primal point against the IR independently of any backend. `tol` is an
// absolute tolerance scaled mildly by row magnitude. Also checks variable bounds and the
// integrality of binaries.
std::vector<RowViolation> verify_solution(const ModelIR& ir, const std::vector<double>& x,
                                          double tol);

}  // namespace drtep
