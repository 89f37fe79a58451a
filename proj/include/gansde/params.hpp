#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gansde/common.hpp"

namespace gansde {

// The joint parameter pair of generator (theta) and discriminator (omega).
struct JointParams {
  Vector theta;
  Vector omega;

  Index dim_theta() const { return theta.size(); }
  Index dim_omega() const { return omega.size(); }
  Index dim() const { return theta.size() + omega.size(); }

  Vector flat() const {
    Vector u(dim());
    u << theta, omega;
    return u;
  }

  static JointParams from_flat(const Vector& u, Index d_theta, Index d_omega) {
    require(u.size() == d_theta + d_omega, "from_flat: dimension mismatch");
    return {u.head(d_theta), u.tail(d_omega)};
  }

  double norm() const { return std::sqrt(theta.squaredNorm() + omega.squaredNorm()); }

  void require_finite(const std::string& where) const {
    if (!all_finite(theta) || !all_finite(omega))
      throw Error(where + ": non-finite parameter entry");
  }
};

// Finite collection of latent draws z_i and real samples x_j.
struct Dataset {
  std::vector<Vector> latents;  // z_1..z_N
  std::vector<Vector> reals;    // x_1..x_M

  int num_latents() const { return static_cast<int>(latents.size()); }
  int num_reals() const { return static_cast<int>(reals.size()); }
  long num_pairs() const { return static_cast<long>(latents.size()) * static_cast<long>(reals.size()); }

  static Dataset scalar(std::initializer_list<double> zs, std::initializer_list<double> xs) {
    Dataset d;
    for (double z : zs) d.latents.push_back(Vector::Constant(1, z));
    for (double x : xs) d.reals.push_back(Vector::Constant(1, x));
    return d;
  }

  // `bound`, when set, declares the bounded box |entry| <= bound required by
  // the compact-data models.
  void validate(std::optional<double> bound = std::nullopt) const {
    require(!latents.empty(), "dataset: needs at least one latent (N >= 1)");
    require(!reals.empty(), "dataset: needs at least one real sample (M >= 1)");
    auto check = [&](const std::vector<Vector>& vs, const char* name) {
      const Index d = vs.front().size();
      for (std::size_t i = 0; i < vs.size(); ++i) {
        if (vs[i].size() != d)
          throw Error(std::string("dataset: inconsistent ") + name + " dimension at index " + std::to_string(i));
        if (!all_finite(vs[i]))
          throw Error(std::string("dataset: non-finite ") + name + " entry at index " + std::to_string(i));
        if (bound && vs[i].cwiseAbs().maxCoeff() > *bound)
          throw Error(std::string("dataset: ") + name + " entry at index " + std::to_string(i) +
                      " outside declared box [" + format_double(-*bound) + ", " + format_double(*bound) + "]");
      }
    };
    check(latents, "latent");
    check(reals, "real");
  }
};

// Two-section CSV: header `kind,value...`, one row per sample, kind in {z, x}.
inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("dataset csv: cannot open " + path);
  Dataset ds;
  std::string line;
  long lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.empty()) continue;
    if (!saw_header) {
      if (cells[0] != "kind")
        throw Error("dataset csv: expected header starting with `kind` at line 1 of " + path);
      saw_header = true;
      continue;
    }
    const std::string& kind = cells[0];
    if (kind != "z" && kind != "x")
      throw Error("dataset csv: unknown kind `" + kind + "` at line " + std::to_string(lineno));
    Vector v(static_cast<Index>(cells.size()) - 1);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      try {
        v[static_cast<Index>(i) - 1] = std::stod(cells[i]);
      } catch (const std::exception&) {
        throw Error("dataset csv: bad number `" + cells[i] + "` at line " + std::to_string(lineno));
      }
    }
    if (v.size() == 0) throw Error("dataset csv: row with no values at line " + std::to_string(lineno));
    (kind == "z" ? ds.latents : ds.reals).push_back(std::move(v));
  }
  ds.validate();
  return ds;
}

}  // namespace gansde
