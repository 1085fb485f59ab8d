use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &str) {
    Python::with_gil(|py| {
        let module = wrap_pymodule!(qanet::qanet)(py);
        let globals = PyDict::new(py);
        globals.set_item("qanet", module).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn metrics_and_text() {
    run(r#"
assert qanet.normalize_answer("An  Apple, a day") == "apple day"
assert abs(qanet.f1_score("New York City", "New York") - 0.8) < 1e-12
assert [t[0] for t in qanet.tokenize("U.S. (today)")] == ["U.S", ".", "(", "today", ")"]
r = qanet.evaluate({"x": "blue"}, {"x": ["red", "blue sky"]})
assert abs(r["f1"] - 200 / 3) < 1e-9 and r["exact_match"] == 0.0
"#);
}

#[test]
fn table_one_and_span_inference() {
    run(r#"
got = qanet.extract_answer(
    "All departments in the College of Science offer PHD programs with the exception of the Department of Preparatory Studies .",
    "Department of Pre-Professional Studies")
assert got[2] == "Department of Preparatory Studies"
s, e, score = qanet.dp_span_inference([0.5, 0.5], [0.5, 0.5], 30)
assert (s, e) == (0, 0) and score == 0.25
assert qanet.lr_schedule(5000) == 0.001
"#);
}

#[test]
fn errors_become_python_exceptions() {
    run(r#"
for call in (lambda: qanet.dp_span_inference([], [], 3),
             lambda: qanet.evaluate({}, {"a": ["x"]}),
             lambda: qanet.resolve_config(["model.nope=1"]),
             lambda: qanet.Predictor("/no/such/checkpoint.bin")):
    try:
        call()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
"#);
}
