use pyo3::prelude::*;
use pylrperc::pylrperc;

const SCRIPT: &std::ffi::CStr = cr#"
import math
import pylrperc as lr

k = lr.Kernel(1, 0.5, 4.0)
assert k.d == 1 and k.core_radius >= 32
assert abs(k.dhat([0.0])[0] - 1.0) < 1e-15
om, err = k.one_minus_dhat([1e-6])
assert abs(om / (k.axis_valpha() * 1e-6 ** 0.5) - 1.0) < 1e-3

ens = lr.run_ensemble(k, 0.5, 8, 200, seed=3, mode="branching")
m, se = ens.mean_count(4)
assert abs(m - 0.5 ** 4) < 5 * se + 1e-12, (m, se)
assert ens.to_json().startswith("{")

fit = lr.fit_constant([(n, q, math.exp(-2 * q ** 0.5), 0.0) for n in (10, 100, 1000) for q in (0.5, 1, 1.5, 2)], 0.5)
assert abs(fit["c_hat"] - 2.0) < 1e-9

try:
    lr.run_ensemble(k, 0.5, 8, 200, seed=3, mode="bogus")
    raise AssertionError("bad mode accepted")
except ValueError:
    pass
"#;

#[test]
fn python_api_round_trip() {
    pyo3::append_to_inittab!(pylrperc);
    Python::attach(|py| py.run(SCRIPT, None, None)).unwrap();
}
