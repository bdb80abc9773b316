#pragma once

// Core spectral data types: wavenumber grids, single spectra, mixture
// matrices (one column per laser excitation wavelength) and reference
// libraries, plus CSV ingestion and grid resampling.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace semiblind {

/// Input text that could not be turned into spectra. `line()` is 1-based,
/// or 0 when the problem is not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Strictly increasing wavenumber axis (cm^-1) with at least two samples.
class SpectralGrid {
 public:
  explicit SpectralGrid(std::vector<double> wavenumbers);

  std::size_t size() const noexcept { return wavenumbers_.size(); }
  std::span<const double> wavenumbers() const noexcept { return wavenumbers_; }
  double operator[](std::size_t i) const { return wavenumbers_[i]; }
  double front() const { return wavenumbers_.front(); }
  double back() const { return wavenumbers_.back(); }

  /// Evenly spaced grid from `lo` to `hi` inclusive.
  static SpectralGrid uniform(double lo, double hi, std::size_t points);

  friend bool operator==(const SpectralGrid&, const SpectralGrid&) = default;

 private:
  std::vector<double> wavenumbers_;
};

class Spectrum {
 public:
  Spectrum(SpectralGrid grid, std::vector<double> intensities, std::string label = {});

  const SpectralGrid& grid() const noexcept { return grid_; }
  std::span<const double> intensities() const noexcept { return intensities_; }
  const std::string& label() const noexcept { return label_; }
  Eigen::Map<const Eigen::VectorXd> vector() const {
    return {intensities_.data(), static_cast<Eigen::Index>(intensities_.size())};
  }

 private:
  SpectralGrid grid_;
  std::vector<double> intensities_;
  std::string label_;
};

/// p x m matrix of measured spectra. Column j was recorded at
/// `laser_wavelengths()[j]` nm; columns whose header label is not numeric carry NaN.
class MixtureMatrix {
 public:
  MixtureMatrix(SpectralGrid grid, Eigen::MatrixXd values, std::vector<std::string> labels,
                std::vector<double> laser_wavelengths);
  /// Labels are derived from the wavelengths.
  MixtureMatrix(SpectralGrid grid, Eigen::MatrixXd values, std::vector<double> laser_wavelengths);

  const SpectralGrid& grid() const noexcept { return grid_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<double>& laser_wavelengths() const noexcept { return laser_wavelengths_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  Spectrum column(std::size_t j) const;

  friend bool operator==(const MixtureMatrix& a, const MixtureMatrix& b);

 private:
  SpectralGrid grid_;
  Eigen::MatrixXd values_;
  std::vector<std::string> labels_;
  std::vector<double> laser_wavelengths_;
};

/// Named nonnegative reference spectra on one shared grid, iterated in name order.
class ReferenceLibrary {
 public:
  explicit ReferenceLibrary(SpectralGrid grid);

  void add(const std::string& name, std::vector<double> intensities);
  bool contains(const std::string& name) const { return entries_.contains(name); }
  Spectrum at(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }
  const SpectralGrid& grid() const noexcept { return grid_; }
  const std::map<std::string, std::vector<double>>& entries() const noexcept { return entries_; }

  /// p x k matrix whose columns are the named entries, in the given order.
  Eigen::MatrixXd matrix(std::span<const std::string> names) const;

  /// Every entry resampled onto `target`.
  ReferenceLibrary resampled(const SpectralGrid& target) const;

 private:
  SpectralGrid grid_;
  std::map<std::string, std::vector<double>> entries_;
};

/// Upper bounds on fitted concentrations: one per known substance, plus an
/// optional cap on the sum over `total_members` in every mixture column.
struct ConcentrationBounds {
  std::map<std::string, double> per_substance;
  std::optional<double> total_bound;
  /// Substances covered by `total_bound`. Empty means all of `per_substance`.
  std::set<std::string> total_members;

  void validate() const;
  double bound(const std::string& name) const;
  bool in_total(const std::string& name) const;
};

MixtureMatrix parse_spectra_csv(std::istream& in);
MixtureMatrix parse_spectra_csv(std::string_view text);
void write_spectra_csv(std::ostream& out, const MixtureMatrix& x);
std::string to_csv(const MixtureMatrix& x);

MixtureMatrix load_spectra_csv(const std::filesystem::path& path);
void save_spectra_csv(const std::filesystem::path& path, const MixtureMatrix& x);

/// Linear interpolation onto `target`; zero outside the source range.
Spectrum resample(const Spectrum& spectrum, const SpectralGrid& target);

MixtureMatrix select_columns(const MixtureMatrix& x, std::span<const std::size_t> indices);

/// Indices of the columns whose laser wavelength matches one of `wavelengths_nm`
/// to within `tol` nm, in the order requested.
std::vector<std::size_t> columns_at_wavelengths(const MixtureMatrix& x,
                                                std::span<const double> wavelengths_nm,
                                                double tol = 1e-6);

/// A directory of `<name>.csv` files (wavenumber, intensity), each
/// resampled onto `grid` when one is given.
ReferenceLibrary load_library_dir(const std::filesystem::path& dir,
                                  const std::optional<SpectralGrid>& grid = std::nullopt);
void save_library_dir(const std::filesystem::path& dir, const ReferenceLibrary& library);

Spectrum parse_reference_csv(std::istream& in, const std::string& name);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace semiblind
