#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "ebr/channel.hpp"
#include "ebr/corpus.hpp"
#include "ebr/energy.hpp"
#include "ebr/params.hpp"

namespace testing {

inline ebr::TokenSeq seq(std::vector<ebr::TokenId> ids) { return ebr::TokenSeq(std::move(ids)); }

inline std::vector<int> ints(const std::vector<ebr::TokenId>& ids) { return {ids.begin(), ids.end()}; }

inline ebr::SyntheticTask task(ebr::TaskKind kind, std::size_t vocab_size = 30) {
  ebr::SyntheticTaskOptions o;
  o.vocab_size = vocab_size;
  return ebr::SyntheticTask(kind, o);
}

inline ebr::ChannelParams channel_params(double copy, double sub, double ins, double del) {
  ebr::ChannelParams p;
  p.p_copy = copy;
  p.p_substitute = sub;
  p.p_insert = ins;
  p.p_delete = del;
  return p;
}

/// Upper tail of the chi-square distribution.
inline double chi_square_p(double statistic, double dof) {
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

/// Largest relative error between analytic and central-difference gradients
/// over the given flat coordinates. Denominators are floored at 1e-6 so
/// coordinates whose gradient is zero compare by absolute error.
inline double max_relative_error(ebr::ParamStore& params, const ebr::ParamStore& analytic,
                                 const std::vector<std::size_t>& coords, const std::function<double()>& objective,
                                 double h = 1e-4) {
  double worst = 0.0;
  for (std::size_t c : coords) {
    double& x = params.coord(c);
    const double saved = x;
    x = saved + h;
    const double up = objective();
    x = saved - h;
    const double down = objective();
    x = saved;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic.coord(c);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Sets EBR_THREADS for the lifetime of the object.
class ThreadsEnv {
 public:
  explicit ThreadsEnv(int n) {
    if (const char* v = std::getenv("EBR_THREADS")) previous_ = v, had_ = true;
    setenv("EBR_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ThreadsEnv() {
    if (had_) setenv("EBR_THREADS", previous_.c_str(), 1);
    else unsetenv("EBR_THREADS");
  }

 private:
  std::string previous_;
  bool had_ = false;
};

}  // namespace testing
