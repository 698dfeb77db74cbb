#include <doctest.h>

#include "kerrcool/errors.hpp"
#include "kerrcool/spectrum.hpp"

#include <sstream>

using namespace kerrcool;

TEST_SUITE("spectrum")
{
  TEST_CASE("csv round trip")
  {
    SpectrumTrace t;
    t.freq = {1.0, 2.0, 3.5};
    t.psd = {0.25, 1.0 / 3.0, 7e-21};
    t.enbw = 12.5;
    t.units = PsdUnits::DetectorPower;
    t.metadata["source"] = "unit";
    std::stringstream ss;
    write_csv(ss, t);
    const auto r = read_csv(ss);
    CHECK(r.freq == t.freq);
    CHECK(r.psd == t.psd);
    CHECK(r.enbw == 12.5);
    CHECK(r.units == PsdUnits::DetectorPower);
    CHECK(r.metadata.at("source") == "unit");
  }

  TEST_CASE("malformed input")
  {
    std::stringstream bad("freq_hz,psd\n2,1\n1,1\n");
    CHECK_THROWS_AS(read_csv(bad), DomainError);
    std::stringstream no_header("1,2\n");
    CHECK_THROWS_AS(read_csv(no_header), DomainError);
    CHECK_THROWS_AS(psd_units_from_string("furlongs"), DomainError);
  }

  TEST_CASE("integration and interpolation")
  {
    SpectrumTrace t;
    for (int i = 0; i <= 10; ++i) {
      t.freq.push_back(i);
      t.psd.push_back(2.0 * i);
    }
    CHECK(integrate_trace(t) == doctest::Approx(100.0));
    CHECK(integrate_trace(t, 2.5, 4.5) == doctest::Approx(4.5 * 4.5 - 2.5 * 2.5));
    CHECK(integrate_trace(t, -5.0, 1.0) == doctest::Approx(1.0));
    CHECK(interpolate(t, 3.25) == doctest::Approx(6.5));
    CHECK(interpolate(t, 99.0) == 20.0);
  }

  TEST_CASE("merge grids")
  {
    const auto g = merge_grids({0.0, 1.0, 2.0}, {1.0, 1.5, 3.0});
    CHECK(g == std::vector<double>{0.0, 1.0, 1.5, 2.0, 3.0});
  }
}
