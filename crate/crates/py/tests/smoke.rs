use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

#[test]
fn python_smoke_script_passes() {
    Python::initialize();
    let script = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/python/smoke_test.py")).unwrap();
    Python::attach(|py| {
        let module = wrap_pymodule!(ovmap::ovmap)(py);
        let sys = py.import("sys").unwrap();
        sys.getattr("modules").unwrap().set_item("ovmap", module).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("__name__", "smoke").unwrap();
        let code = CString::new(script + "\nstatus = main()\n").unwrap();
        py.run(&code, Some(&globals), None).unwrap();
        let status: i32 = globals.get_item("status").unwrap().unwrap().extract().unwrap();
        assert_eq!(status, 0);
    });
}

#[test]
fn errors_surface_as_ovmap_error() {
    Python::initialize();
    Python::attach(|py| {
        let m = wrap_pymodule!(ovmap::ovmap)(py);
        let m = m.bind(py);
        let err = m.getattr("Scene").unwrap().call_method1("load", ("/nonexistent/scene.toml",)).unwrap_err();
        assert!(err.is_instance(py, &m.getattr("OvmapError").unwrap()));
        let err = m.getattr("synth").unwrap().call1(("/tmp", 0, 3, 4, "spiral")).unwrap_err();
        assert!(err.to_string().contains("unknown layout"));
    });
}
