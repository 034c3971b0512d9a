#include "quiver/report.hpp"

#include <charconv>
#include <iomanip>
#include <sstream>
#include <vector>

#include "quiver/error.hpp"

namespace quiver {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string write_report(const DetectionReport& report) {
  std::ostringstream os;
  os << "method,detected,successful,total\n";
  for (const auto& a : report.attacks) os << a.method << ',' << a.detected << ',' << a.successful << ',' << a.total << '\n';
  const auto& c = report.clean;
  os << "Test data," << c.trusted << ',' << c.wrongly_rejected << ',' << c.total << '\n';
  os << "Accuracy," << format_double(c.accuracy_trusted()) << ",-," << format_double(c.accuracy_whole()) << '\n';
  return os.str();
}

nlohmann::json report_to_json(const DetectionReport& report) {
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : report.attacks) {
    attacks.push_back({{"method", a.method}, {"detected", a.detected}, {"successful", a.successful}, {"total", a.total}});
  }
  const auto& c = report.clean;
  return {{"attacks", attacks},
          {"test_data",
           {{"trusted", c.trusted},
            {"wrongly_rejected", c.wrongly_rejected},
            {"total", c.total},
            {"correct_trusted", c.correct_trusted},
            {"correct", c.correct}}},
          {"accuracy", {{"trusted", c.accuracy_trusted()}, {"whole", c.accuracy_whole()}}},
          {"parameters", report.parameters}};
}

DetectionReport report_from_json(const nlohmann::json& j) {
  DetectionReport r;
  try {
    for (const auto& a : j.at("attacks")) {
      r.attacks.push_back({a.at("method").get<std::string>(), a.at("detected").get<std::size_t>(),
                           a.at("successful").get<std::size_t>(), a.at("total").get<std::size_t>()});
    }
    const auto& c = j.at("test_data");
    r.clean.trusted = c.at("trusted").get<std::size_t>();
    r.clean.wrongly_rejected = c.at("wrongly_rejected").get<std::size_t>();
    r.clean.total = c.at("total").get<std::size_t>();
    r.clean.correct_trusted = c.value("correct_trusted", std::size_t{0});
    r.clean.correct = c.value("correct", std::size_t{0});
    r.parameters = j.value("parameters", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("bad report json: ") + e.what());
  }
  return r;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    fail(ErrorCode::InvalidArgument, "bad count '" + s + "' in report");
  }
  return v;
}

}  // namespace

DetectionReport parse_report(std::string_view csv) {
  DetectionReport r;
  std::istringstream is{std::string(csv)};
  std::string line;
  if (!std::getline(is, line) || line != "method,detected,successful,total") {
    fail(ErrorCode::InvalidArgument, "report header missing");
  }
  bool saw_clean = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 4) fail(ErrorCode::InvalidArgument, "report row needs 4 fields: " + line);
    if (f[0] == "Accuracy") continue;
    if (f[0] == "Test data") {
      r.clean.trusted = to_size(f[1]);
      r.clean.wrongly_rejected = to_size(f[2]);
      r.clean.total = to_size(f[3]);
      saw_clean = true;
      continue;
    }
    r.attacks.push_back({f[0], to_size(f[1]), to_size(f[2]), to_size(f[3])});
  }
  if (!saw_clean) fail(ErrorCode::InvalidArgument, "report lacks the test-data row");
  return r;
}

std::string render_report(const DetectionReport& report) {
  std::ostringstream os;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
    os << std::left << std::setw(12) << a << std::right << std::setw(12) << b << std::setw(14) << c << std::setw(10)
       << d << '\n';
  };
  row("Attack", "Detected", "Successful", "Total");
  for (const auto& a : report.attacks) {
    row(a.method, std::to_string(a.detected), std::to_string(a.successful), std::to_string(a.total));
  }
  row("", "Trusted", "Wrongly rej.", "");
  const auto& c = report.clean;
  row("Test data", std::to_string(c.trusted), std::to_string(c.wrongly_rejected), std::to_string(c.total));
  std::ostringstream acc_t, acc_w;
  acc_t << std::fixed << std::setprecision(5) << c.accuracy_trusted();
  acc_w << std::fixed << std::setprecision(5) << c.accuracy_whole();
  row("Accuracy", acc_t.str(), "-", acc_w.str());
  return os.str();
}

std::string curves_csv(std::span<const EpochStats> curves) {
  std::ostringstream os;
  os << "epoch,lr,train_loss,train_accuracy,test_loss,test_accuracy\n";
  for (const auto& e : curves) {
    os << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.train_loss) << ','
       << format_double(e.train_accuracy) << ',' << format_double(e.test_loss) << ',' << format_double(e.test_accuracy)
       << '\n';
  }
  return os.str();
}

}  // namespace quiver
