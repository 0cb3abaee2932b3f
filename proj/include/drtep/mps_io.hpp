#pragma once
#include <string>

#include "drtep/model_ir.hpp"

namespace drtep {

// Serializes the model in MPS layout (fixed-style aligned columns, free-format friendly;
// values carry 12 significant digits). Bilinear row/objective terms are written as
// quadratic-matrix sections. export -> import -> export is byte-identical.
std::string write_mps(const ModelIR& ir, const std::string& model_name = "DRTEP");
void write_mps_file(const ModelIR& ir, const std::string& path,
                    const std::string& model_name = "DRTEP");

// Parses what write_mps produces (plus ordinary whitespace-separated MPS). Provenance
// tags are not representable in MPS; imported rows are tagged "imported".
ModelIR read_mps(const std::string& text);
ModelIR read_mps_file(const std::string& path);

}  // namespace drtep
