#include "drtep/mps_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace drtep {

namespace {

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string pad(const std::string& s, size_t w) {
  return s.size() >= w ? s + "  " : s + std::string(w - s.size(), ' ');
}

const char* kObjName = "OBJROW";

}  // namespace

std::string write_mps(const ModelIR& ir, const std::string& model_name) {
  std::ostringstream os;
  os << "NAME" << std::string(10, ' ') << model_name << "\n";
  os << "OBJSENSE\n    " << (ir.obj_sense() == ObjSense::Max ? "MAX" : "MIN") << "\n";
  os << "ROWS\n";
  os << " N  " << kObjName << "\n";
  for (const auto& r : ir.rows()) {
    char s = r.sense == RowSense::LE ? 'L' : (r.sense == RowSense::GE ? 'G' : 'E');
    os << " " << s << "  " << r.name << "\n";
  }

  // column-major view of the constraint matrix; every variable gets an explicit objective
  // entry (zero included) so column order and isolated variables survive the round trip
  std::vector<std::vector<std::pair<std::string, double>>> cols(size_t(ir.num_vars()));
  {
    std::vector<double> obj(size_t(ir.num_vars()), 0.0);
    for (const auto& t : ir.obj_terms()) obj[size_t(t.var)] = t.coef;
    for (VarId v = 0; v < ir.num_vars(); ++v) cols[size_t(v)].push_back({kObjName, obj[size_t(v)]});
    for (const auto& r : ir.rows())
      for (const auto& t : r.terms) cols[size_t(t.var)].push_back({r.name, t.coef});
  }

  os << "COLUMNS\n";
  bool in_int = false;
  for (VarId v = 0; v < ir.num_vars(); ++v) {
    const auto& var = ir.var(v);
    bool want_int = var.kind == VarKind::Binary;
    if (want_int != in_int) {
      os << "    " << pad("MARKER", 24) << pad("'MARKER'", 24)
         << (want_int ? "'INTORG'" : "'INTEND'") << "\n";
      in_int = want_int;
    }
    for (const auto& [row, coef] : cols[size_t(v)])
      os << "    " << pad(var.name, 24) << pad(row, 24) << fmt_num(coef) << "\n";
  }
  if (in_int)
    os << "    " << pad("MARKER", 24) << pad("'MARKER'", 24) << "'INTEND'" << "\n";

  os << "RHS\n";
  if (ir.obj_constant() != 0.0)
    os << "    " << pad("RHS", 24) << pad(kObjName, 24) << fmt_num(-ir.obj_constant()) << "\n";
  for (const auto& r : ir.rows())
    if (r.rhs != 0.0)
      os << "    " << pad("RHS", 24) << pad(r.name, 24) << fmt_num(r.rhs) << "\n";

  os << "BOUNDS\n";
  for (VarId v = 0; v < ir.num_vars(); ++v) {
    const auto& var = ir.var(v);
    auto bnd = [&](const char* kind, double val, bool has_val) {
      os << " " << kind << " " << pad("BND", 22) << pad(var.name, 24);
      if (has_val) os << fmt_num(val);
      os << "\n";
    };
    if (var.lb == var.ub) {
      bnd("FX", var.lb, true);
    } else if (var.kind == VarKind::Binary) {
      bnd("BV", 0, false);
    } else {
      if (var.lb == -kInf && var.ub == kInf) {
        bnd("FR", 0, false);
      } else {
        if (var.lb == -kInf)
          bnd("MI", 0, false);
        else if (var.lb != 0.0)
          bnd("LO", var.lb, true);
        if (var.ub != kInf) bnd("UP", var.ub, true);
      }
    }
  }

  // quadratic sections for passthrough bilinear content; terms are canonicalized (low
  // variable id first, duplicate pairs merged) and symmetric halves carry coef/2, which
  // makes export -> import -> export byte-stable
  auto emit_quad = [&](const std::vector<BilinearTerm>& terms) {
    std::map<std::pair<VarId, VarId>, double> acc;
    for (const auto& b : terms) {
      VarId lo = std::min(b.a, b.b), hi = std::max(b.a, b.b);
      acc[{lo, hi}] += b.coef;
    }
    for (const auto& [pair, coef] : acc) {
      if (coef == 0.0) continue;
      if (pair.first == pair.second) {
        os << "    " << pad(ir.var(pair.first).name, 24) << pad(ir.var(pair.second).name, 24)
           << fmt_num(coef) << "\n";
      } else {
        os << "    " << pad(ir.var(pair.first).name, 24) << pad(ir.var(pair.second).name, 24)
           << fmt_num(coef / 2) << "\n";
        os << "    " << pad(ir.var(pair.second).name, 24) << pad(ir.var(pair.first).name, 24)
           << fmt_num(coef / 2) << "\n";
      }
    }
  };
  if (!ir.obj_bilinear().empty()) {
    os << "QUADOBJ\n";
    emit_quad(ir.obj_bilinear());
  }
  for (RowId r = 0; r < ir.num_rows(); ++r) {
    const auto& row = ir.row(r);
    if (row.bilinear.empty()) continue;
    os << "QCMATRIX   " << row.name << "\n";
    emit_quad(row.bilinear);
  }
  os << "ENDATA\n";
  return os.str();
}

void write_mps_file(const ModelIR& ir, const std::string& path, const std::string& model_name) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << write_mps(ir, model_name);
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

struct PendingRow {
  RowSense sense;
  std::string name;
  LinExpr lhs;
  double rhs = 0.0;
  std::vector<std::tuple<std::string, std::string, double>> bilinear;  // var,var,coef
};

}  // namespace

ModelIR read_mps(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  enum Section { None, Rows, Columns, Rhs, Ranges, Bounds, QuadObj, QcMatrix } sec = None;

  ObjSense sense = ObjSense::Min;
  bool pending_objsense = false;
  std::string obj_row_name;
  std::vector<std::pair<char, std::string>> row_decls;
  struct ColEntry {
    std::string var, row;
    double coef;
  };
  std::vector<ColEntry> entries;
  std::vector<std::pair<std::string, bool>> var_order;  // name, integer?
  std::map<std::string, size_t> var_seen;
  std::map<std::string, double> rhs_map;
  double obj_rhs = 0.0;
  struct BoundSpec {
    std::string kind, var;
    double val;
  };
  std::vector<BoundSpec> bounds;
  std::vector<std::tuple<std::string, std::string, double>> quad_obj;
  std::map<std::string, std::vector<std::tuple<std::string, std::string, double>>> quad_rows;
  std::string current_qc_row;
  bool integer_mode = false;

  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '*') continue;
    if (line[0] != ' ' && line[0] != '\t') {
      auto toks = tokenize(line);
      const std::string& kw = toks[0];
      if (kw == "NAME") {
        sec = None;
      } else if (kw == "OBJSENSE") {
        pending_objsense = true;
        sec = None;
        if (toks.size() > 1) {
          sense = (toks[1] == "MAX" || toks[1] == "MAXIMIZE") ? ObjSense::Max : ObjSense::Min;
          pending_objsense = false;
        }
      } else if (kw == "ROWS") {
        sec = Rows;
      } else if (kw == "COLUMNS") {
        sec = Columns;
      } else if (kw == "RHS") {
        sec = Rhs;
      } else if (kw == "RANGES") {
        sec = Ranges;
      } else if (kw == "BOUNDS") {
        sec = Bounds;
      } else if (kw == "QUADOBJ" || kw == "QMATRIX") {
        sec = QuadObj;
      } else if (kw == "QCMATRIX") {
        sec = QcMatrix;
        if (toks.size() < 2) throw std::runtime_error("QCMATRIX without row name");
        current_qc_row = toks[1];
      } else if (kw == "ENDATA") {
        break;
      } else {
        throw std::runtime_error("unknown MPS section: " + kw);
      }
      continue;
    }
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    if (pending_objsense) {
      sense = (toks[0] == "MAX" || toks[0] == "MAXIMIZE") ? ObjSense::Max : ObjSense::Min;
      pending_objsense = false;
      continue;
    }
    switch (sec) {
      case Rows: {
        if (toks.size() != 2) throw std::runtime_error("bad ROWS line: " + line);
        if (toks[0] == "N") {
          if (obj_row_name.empty()) obj_row_name = toks[1];
        } else {
          row_decls.push_back({toks[0][0], toks[1]});
        }
        break;
      }
      case Columns: {
        if (toks.size() >= 3 && toks[1] == "'MARKER'") {
          integer_mode = toks[2] == "'INTORG'";
          break;
        }
        // entries come as var row value [row value]
        const std::string& var = toks[0];
        if (!var_seen.count(var)) {
          var_seen[var] = var_order.size();
          var_order.push_back({var, integer_mode});
        }
        for (size_t i = 1; i + 1 < toks.size(); i += 2)
          entries.push_back({var, toks[i], std::stod(toks[i + 1])});
        break;
      }
      case Rhs: {
        for (size_t i = 1; i + 1 < toks.size(); i += 2) {
          if (toks[i] == obj_row_name)
            obj_rhs = std::stod(toks[i + 1]);
          else
            rhs_map[toks[i]] = std::stod(toks[i + 1]);
        }
        break;
      }
      case Ranges:
        throw std::runtime_error("RANGES section not supported");
      case Bounds: {
        if (toks.size() < 3) throw std::runtime_error("bad BOUNDS line: " + line);
        double v = toks.size() >= 4 ? std::stod(toks[3]) : 0.0;
        bounds.push_back({toks[0], toks[2], v});
        break;
      }
      case QuadObj: {
        if (toks.size() != 3) throw std::runtime_error("bad QUADOBJ line: " + line);
        quad_obj.push_back({toks[0], toks[1], std::stod(toks[2])});
        break;
      }
      case QcMatrix: {
        if (toks.size() != 3) throw std::runtime_error("bad QCMATRIX line: " + line);
        quad_rows[current_qc_row].push_back({toks[0], toks[1], std::stod(toks[2])});
        break;
      }
      case None:
        break;
    }
  }

  ModelIR ir;
  std::map<std::string, VarId> vid;
  for (const auto& [name, is_int] : var_order)
    vid[name] = ir.add_var(name, is_int ? VarKind::Binary : VarKind::Continuous,
                           is_int ? 0.0 : 0.0, is_int ? 1.0 : kInf);

  // default continuous bounds are [0, inf); apply BOUNDS records on top
  for (const auto& b : bounds) {
    auto it = vid.find(b.var);
    if (it == vid.end()) throw std::runtime_error("bound on unknown column: " + b.var);
    Variable& var = ir.var_mutable(it->second);
    if (b.kind == "FX") {
      var.lb = var.ub = b.val;
    } else if (b.kind == "FR") {
      var.lb = -kInf;
      var.ub = kInf;
    } else if (b.kind == "MI") {
      var.lb = -kInf;
    } else if (b.kind == "PL") {
      var.ub = kInf;
    } else if (b.kind == "LO") {
      var.lb = b.val;
    } else if (b.kind == "UP") {
      var.ub = b.val;
    } else if (b.kind == "BV") {
      var.kind = VarKind::Binary;
      var.lb = 0;
      var.ub = 1;
    } else if (b.kind == "UI") {
      var.ub = b.val;
    } else if (b.kind == "LI") {
      var.lb = b.val;
    } else {
      throw std::runtime_error("unsupported bound kind: " + b.kind);
    }
  }

  std::map<std::string, LinExpr> row_lhs;
  LinExpr obj;
  for (const auto& e : entries) {
    if (e.row == obj_row_name)
      obj.add(vid.at(e.var), e.coef);
    else
      row_lhs[e.row].add(vid.at(e.var), e.coef);
  }
  obj.constant = -obj_rhs;
  ir.set_objective(sense, obj);

  // merge symmetric quadratic halves back into one term per unordered pair
  auto fold_quad = [&](const std::vector<std::tuple<std::string, std::string, double>>& terms) {
    std::map<std::pair<VarId, VarId>, double> acc;
    for (const auto& [a, b, c] : terms) {
      VarId va = vid.at(a), vb = vid.at(b);
      if (va > vb) std::swap(va, vb);
      acc[{va, vb}] += c;
    }
    return acc;
  };

  for (const auto& [sense_ch, name] : row_decls) {
    RowSense rs = sense_ch == 'L' ? RowSense::LE : (sense_ch == 'G' ? RowSense::GE : RowSense::EQ);
    double rhs = rhs_map.count(name) ? rhs_map[name] : 0.0;
    LinExpr lhs = row_lhs.count(name) ? row_lhs[name] : LinExpr{};
    RowId rid = ir.add_row(name, lhs, rs, rhs, "imported");
    if (quad_rows.count(name))
      for (const auto& [pair, coef] : fold_quad(quad_rows[name]))
        ir.add_row_bilinear(rid, pair.first, pair.second, coef);
  }
  for (const auto& [pair, coef] : fold_quad(quad_obj))
    ir.add_obj_bilinear(pair.first, pair.second, coef);

  return ir;
}

ModelIR read_mps_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return read_mps(ss.str());
}

}  // namespace drtep
