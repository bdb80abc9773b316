#include "semiblind/spectra.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace semiblind {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

bool skippable(std::string_view line) {
  auto t = trim(line);
  return t.empty() || t.front() == '#';
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Header row plus numeric rows of identical width.
Table read_table(std::istream& in) {
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (skippable(line)) continue;
    auto cells = split_commas(line);
    if (!have_header) {
      for (auto c : cells) table.header.emplace_back(c);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw ParseError("inconsistent column count at line " + std::to_string(line_no) + ": expected " +
                           std::to_string(table.header.size()) + ", found " + std::to_string(cells.size()),
                       line_no);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) {
      auto v = parse_number(c);
      if (!v) throw ParseError("malformed row at line " + std::to_string(line_no) + ": '" + std::string(c) + "'", line_no);
      row.push_back(*v);
    }
    table.rows.push_back(std::move(row));
  }
  if (!have_header || table.rows.empty()) throw ParseError("empty input");
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    if (!(table.rows[i][0] > table.rows[i - 1][0])) throw ParseError("non-monotonic grid", 0);
  }
  return table;
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line) : std::runtime_error(what), line_(line) {}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// SpectralGrid / Spectrum / MixtureMatrix

SpectralGrid::SpectralGrid(std::vector<double> wavenumbers) : wavenumbers_(std::move(wavenumbers)) {
  if (wavenumbers_.size() < 2) throw std::invalid_argument("spectral grid needs at least 2 points");
  for (std::size_t i = 0; i < wavenumbers_.size(); ++i) {
    if (!std::isfinite(wavenumbers_[i])) throw std::invalid_argument("spectral grid contains a non-finite value");
    if (i > 0 && !(wavenumbers_[i] > wavenumbers_[i - 1])) throw std::invalid_argument("non-monotonic grid");
  }
}

SpectralGrid SpectralGrid::uniform(double lo, double hi, std::size_t points) {
  if (points < 2 || !(hi > lo)) throw std::invalid_argument("uniform grid needs hi > lo and at least 2 points");
  std::vector<double> w(points);
  const double step = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) w[i] = lo + step * static_cast<double>(i);
  w.back() = hi;
  return SpectralGrid(std::move(w));
}

Spectrum::Spectrum(SpectralGrid grid, std::vector<double> intensities, std::string label)
    : grid_(std::move(grid)), intensities_(std::move(intensities)), label_(std::move(label)) {
  if (intensities_.size() != grid_.size()) throw std::invalid_argument("spectrum length does not match its grid");
  for (double v : intensities_)
    if (!std::isfinite(v)) throw std::invalid_argument("spectrum '" + label_ + "' has a non-finite intensity");
}

MixtureMatrix::MixtureMatrix(SpectralGrid grid, Eigen::MatrixXd values, std::vector<std::string> labels,
                             std::vector<double> laser_wavelengths)
    : grid_(std::move(grid)),
      values_(std::move(values)),
      labels_(std::move(labels)),
      laser_wavelengths_(std::move(laser_wavelengths)) {
  if (static_cast<std::size_t>(values_.rows()) != grid_.size())
    throw std::invalid_argument("mixture rows do not match the grid length");
  if (values_.cols() < 1) throw std::invalid_argument("mixture matrix needs at least one column");
  if (laser_wavelengths_.size() != cols() || labels_.size() != cols())
    throw std::invalid_argument("one laser wavelength and label per column required");
  if (!values_.allFinite()) throw std::invalid_argument("mixture matrix has non-finite entries");
}

namespace {
std::vector<std::string> wavelength_labels(const std::vector<double>& lasers) {
  std::vector<std::string> out;
  out.reserve(lasers.size());
  for (double l : lasers) out.push_back(format_double(l));
  return out;
}
}  // namespace

MixtureMatrix::MixtureMatrix(SpectralGrid grid, Eigen::MatrixXd values, std::vector<double> laser_wavelengths)
    : MixtureMatrix(std::move(grid), std::move(values), wavelength_labels(laser_wavelengths), laser_wavelengths) {}

Spectrum MixtureMatrix::column(std::size_t j) const {
  if (j >= cols()) throw std::out_of_range("column index out of range");
  std::vector<double> v(values_.col(static_cast<Eigen::Index>(j)).begin(),
                        values_.col(static_cast<Eigen::Index>(j)).end());
  return Spectrum(grid_, std::move(v), labels_[j]);
}

bool operator==(const MixtureMatrix& a, const MixtureMatrix& b) {
  if (!(a.grid_ == b.grid_) || a.labels_ != b.labels_) return false;
  if (a.values_.rows() != b.values_.rows() || a.values_.cols() != b.values_.cols()) return false;
  if (a.values_ != b.values_) return false;
  for (std::size_t j = 0; j < a.laser_wavelengths_.size(); ++j) {
    double x = a.laser_wavelengths_[j], y = b.laser_wavelengths_[j];
    if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// ReferenceLibrary / bounds

ReferenceLibrary::ReferenceLibrary(SpectralGrid grid) : grid_(std::move(grid)) {}

void ReferenceLibrary::add(const std::string& name, std::vector<double> intensities) {
  if (name.empty()) throw std::invalid_argument("library entry needs a name");
  if (entries_.contains(name)) throw std::invalid_argument("duplicate library entry '" + name + "'");
  if (intensities.size() != grid_.size()) throw std::invalid_argument("library entry '" + name + "' has wrong length");
  for (double v : intensities) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("library entry '" + name + "' must be finite and nonnegative");
  }
  entries_.emplace(name, std::move(intensities));
}

Spectrum ReferenceLibrary::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no library entry named '" + name + "'");
  return Spectrum(grid_, it->second, name);
}

std::vector<std::string> ReferenceLibrary::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

Eigen::MatrixXd ReferenceLibrary::matrix(std::span<const std::string> names) const {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(grid_.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = entries_.find(names[k]);
    if (it == entries_.end()) throw std::out_of_range("no library entry named '" + names[k] + "'");
    a.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(it->second.data(), a.rows());
  }
  return a;
}

ReferenceLibrary ReferenceLibrary::resampled(const SpectralGrid& target) const {
  ReferenceLibrary out(target);
  for (const auto& [name, values] : entries_) {
    auto s = resample(Spectrum(grid_, values, name), target);
    out.add(name, std::vector<double>(s.intensities().begin(), s.intensities().end()));
  }
  return out;
}

void ConcentrationBounds::validate() const {
  for (const auto& [name, b] : per_substance) {
    if (!std::isfinite(b) || b < 0.0) throw std::invalid_argument("bound for '" + name + "' must be >= 0");
  }
  if (total_bound && !(std::isfinite(*total_bound) && *total_bound > 0.0))
    throw std::invalid_argument("total bound must be > 0");
  for (const auto& name : total_members) {
    if (!per_substance.contains(name))
      throw std::invalid_argument("total-bound member '" + name + "' has no per-substance bound");
  }
}

double ConcentrationBounds::bound(const std::string& name) const {
  auto it = per_substance.find(name);
  if (it == per_substance.end()) throw std::invalid_argument("no concentration bound for '" + name + "'");
  return it->second;
}

bool ConcentrationBounds::in_total(const std::string& name) const {
  if (!total_bound) return false;
  return total_members.empty() ? per_substance.contains(name) : total_members.contains(name);
}

// ---------------------------------------------------------------------------
// CSV

MixtureMatrix parse_spectra_csv(std::istream& in) {
  Table t = read_table(in);
  if (t.header.size() < 2) throw ParseError("need a wavenumber column and at least one spectrum column", 0);
  const std::size_t p = t.rows.size();
  const std::size_t m = t.header.size() - 1;
  std::vector<double> wn(p);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < p; ++i) {
    wn[i] = t.rows[i][0];
    for (std::size_t j = 0; j < m; ++j) values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j + 1];
  }
  if (p < 2) throw ParseError("grid needs at least 2 rows", 0);
  std::vector<std::string> labels(t.header.begin() + 1, t.header.end());
  std::vector<double> lasers(m);
  for (std::size_t j = 0; j < m; ++j) lasers[j] = parse_number(labels[j]).value_or(std::nan(""));
  return MixtureMatrix(SpectralGrid(std::move(wn)), std::move(values), std::move(labels), std::move(lasers));
}

MixtureMatrix parse_spectra_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_spectra_csv(in);
}

void write_spectra_csv(std::ostream& out, const MixtureMatrix& x) {
  out << "wavenumber";
  for (const auto& l : x.labels()) out << ',' << l;
  out << '\n';
  const auto& v = x.values();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out << format_double(x.grid()[i]);
    for (Eigen::Index j = 0; j < v.cols(); ++j) out << ',' << format_double(v(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

std::string to_csv(const MixtureMatrix& x) {
  std::ostringstream out;
  write_spectra_csv(out, x);
  return out.str();
}

MixtureMatrix load_spectra_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_spectra_csv(in);
}

void save_spectra_csv(const std::filesystem::path& path, const MixtureMatrix& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_spectra_csv(out, x);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling and column selection

Spectrum resample(const Spectrum& spectrum, const SpectralGrid& target) {
  const auto src = spectrum.grid().wavenumbers();
  const auto val = spectrum.intensities();
  if (target.back() < src.front() || target.front() > src.back())
    throw std::invalid_argument("no overlap between source and target grids");
  std::vector<double> out(target.size(), 0.0);
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double x = target[k];
    if (x < src.front() || x > src.back()) continue;
    auto hi = std::lower_bound(src.begin(), src.end(), x);
    auto i = static_cast<std::size_t>(hi - src.begin());
    if (src[i] == x) {
      out[k] = val[i];
      continue;
    }
    const double t = (x - src[i - 1]) / (src[i] - src[i - 1]);
    out[k] = val[i - 1] + t * (val[i] - val[i - 1]);
  }
  return Spectrum(target, std::move(out), spectrum.label());
}

MixtureMatrix select_columns(const MixtureMatrix& x, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("select_columns needs at least one index");
  std::vector<bool> seen(x.cols(), false);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(indices.size()));
  std::vector<std::string> labels;
  std::vector<double> lasers;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto j = indices[k];
    if (j >= x.cols()) throw std::out_of_range("column index " + std::to_string(j) + " out of range");
    if (seen[j]) throw std::invalid_argument("duplicate column index " + std::to_string(j));
    seen[j] = true;
    values.col(static_cast<Eigen::Index>(k)) = x.values().col(static_cast<Eigen::Index>(j));
    labels.push_back(x.labels()[j]);
    lasers.push_back(x.laser_wavelengths()[j]);
  }
  return MixtureMatrix(x.grid(), std::move(values), std::move(labels), std::move(lasers));
}

std::vector<std::size_t> columns_at_wavelengths(const MixtureMatrix& x, std::span<const double> wavelengths_nm,
                                                double tol) {
  std::vector<std::size_t> out;
  for (double w : wavelengths_nm) {
    const auto& lasers = x.laser_wavelengths();
    auto it = std::find_if(lasers.begin(), lasers.end(), [&](double l) { return std::abs(l - w) <= tol; });
    if (it == lasers.end()) throw std::invalid_argument("no column at laser wavelength " + format_double(w) + " nm");
    out.push_back(static_cast<std::size_t>(it - lasers.begin()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Library directories

Spectrum parse_reference_csv(std::istream& in, const std::string& name) {
  // Header is optional for reference files: a numeric first row is data.
  std::ostringstream buffered;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && !skippable(line)) {
      auto cells = split_commas(line);
      if (cells.size() == 2 && parse_number(cells[0]) && parse_number(cells[1])) buffered << "wavenumber,intensity\n";
      first = false;
    }
    buffered << line << '\n';
  }
  std::istringstream body(buffered.str());
  Table t = read_table(body);
  if (t.header.size() != 2) throw ParseError("reference '" + name + "' must have exactly two columns", 0);
  std::vector<double> wn, val;
  for (const auto& r : t.rows) {
    wn.push_back(r[0]);
    val.push_back(r[1]);
  }
  return Spectrum(SpectralGrid(std::move(wn)), std::move(val), name);
}

ReferenceLibrary load_library_dir(const std::filesystem::path& dir, const std::optional<SpectralGrid>& grid) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("library directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("library directory has no .csv files: " + dir.string());
  std::vector<Spectrum> spectra;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw std::runtime_error("cannot open " + f.string());
    try {
      spectra.push_back(parse_reference_csv(in, f.stem().string()));
    } catch (const ParseError& e) {
      throw ParseError(f.filename().string() + ": " + e.what(), e.line());
    }
  }
  const SpectralGrid target = grid.value_or(spectra.front().grid());
  ReferenceLibrary lib(target);
  for (const auto& s : spectra) {
    auto r = s.grid() == target ? s : resample(s, target);
    lib.add(s.label(), std::vector<double>(r.intensities().begin(), r.intensities().end()));
  }
  return lib;
}

void save_library_dir(const std::filesystem::path& dir, const ReferenceLibrary& library) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, values] : library.entries()) {
    auto path = dir / (name + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "wavenumber,intensity\n";
    for (std::size_t i = 0; i < values.size(); ++i)
      out << format_double(library.grid()[i]) << ',' << format_double(values[i]) << '\n';
  }
}

}  // namespace semiblind
