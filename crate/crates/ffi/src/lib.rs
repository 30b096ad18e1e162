//! C ABI for hiplan.
//!
//! Tasks and programs are opaque heap handles released with their `_free`
//! function. Every fallible function returns a [`HiplanStatus`]; on failure
//! the message is available from [`hiplan_last_error_message`] on the same
//! thread. Strings returned through out-pointers are owned by the caller and
//! released with [`hiplan_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hiplan::canon::canonicalize;
use hiplan::fitting;
use hiplan::priors::{self, GrammarParams, PriorError};
use hiplan::program::{execute, Budget, Outcome, ProgramError};
use hiplan::task::TaskError;

/// Opaque task handle.
pub struct HiplanTask(hiplan::TaskSpec);

/// Opaque program handle.
pub struct HiplanProgram(hiplan::Program);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiplanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ValidationError = 4,
    CapacityError = 5,
    NotSolved = 6,
    DomainError = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiplanOutcome {
    Solved = 0,
    NotSolved = 1,
    NonHalting = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(HiplanStatus, String);

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        let status = match e {
            TaskError::Parse(_) => HiplanStatus::ParseError,
            TaskError::Validation(_) => HiplanStatus::ValidationError,
            TaskError::Capacity(_) => HiplanStatus::CapacityError,
        };
        Failure(status, e.to_string())
    }
}

impl From<ProgramError> for Failure {
    fn from(e: ProgramError) -> Self {
        let status = match e {
            ProgramError::Parse(_) => HiplanStatus::ParseError,
            ProgramError::NotSolved(_) => HiplanStatus::NotSolved,
        };
        Failure(status, e.to_string())
    }
}

impl From<PriorError> for Failure {
    fn from(e: PriorError) -> Self {
        let status = match e {
            PriorError::NotSolved => HiplanStatus::NotSolved,
            _ => HiplanStatus::DomainError,
        };
        Failure(status, e.to_string())
    }
}

impl From<fitting::FitError> for Failure {
    fn from(e: fitting::FitError) -> Self {
        Failure(HiplanStatus::DomainError, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HiplanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HiplanStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HiplanStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HiplanStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(HiplanStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Error message of the most recent call on this thread; empty after a
/// successful call. The pointer stays valid until the next hiplan call on
/// this thread.
#[no_mangle]
pub extern "C" fn hiplan_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hiplan_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a task from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_task_from_json(json: *const c_char, out: *mut *mut HiplanTask) -> HiplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let task = hiplan::load_task(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(HiplanTask(task)));
        Ok(())
    })
}

/// # Safety
/// `task` must be null or a handle from [`hiplan_task_from_json`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hiplan_task_free(task: *mut HiplanTask) {
    if !task.is_null() {
        drop(Box::from_raw(task));
    }
}

/// Number of light cells, or 0 for a null handle.
///
/// # Safety
/// `task` must be null or a live task handle.
#[no_mangle]
pub unsafe extern "C" fn hiplan_task_num_lights(task: *const HiplanTask) -> usize {
    task.as_ref().map_or(0, |t| t.0.num_lights())
}

/// Parses a program from its DSL text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_program_parse(text: *const c_char, out: *mut *mut HiplanProgram) -> HiplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let p = hiplan::parse_program(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(HiplanProgram(p)));
        Ok(())
    })
}

/// # Safety
/// `program` must be null or a live program handle.
#[no_mangle]
pub unsafe extern "C" fn hiplan_program_free(program: *mut HiplanProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Canonical DSL text of a program; free it with [`hiplan_string_free`].
///
/// # Safety
/// `program` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_program_serialize(program: *const HiplanProgram, out: *mut *mut c_char) -> HiplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = hiplan::serialize_program(&ref_arg(program, "program")?.0);
        *out = CString::new(text)
            .map_err(|e| Failure(HiplanStatus::DomainError, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Total number of instructions over all routines, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or a live program handle.
#[no_mangle]
pub unsafe extern "C" fn hiplan_program_length(program: *const HiplanProgram) -> usize {
    program.as_ref().map_or(0, |p| p.0.length())
}

/// Executes a program with the default budget.
///
/// # Safety
/// Handles must be live; `outcome` and `steps` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hiplan_execute(
    task: *const HiplanTask,
    program: *const HiplanProgram,
    outcome: *mut HiplanOutcome,
    steps: *mut usize,
) -> HiplanStatus {
    guard(|| {
        let r = execute(&ref_arg(task, "task")?.0, &ref_arg(program, "program")?.0, Budget::default());
        *out_arg(outcome, "outcome")? = match r.outcome {
            Outcome::Solved => HiplanOutcome::Solved,
            Outcome::NotSolved => HiplanOutcome::NotSolved,
            Outcome::NonHalting => HiplanOutcome::NonHalting,
        };
        *out_arg(steps, "steps")? = r.steps();
        Ok(())
    })
}

/// Canonical form of a solving program, as a new handle.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_canonicalize(
    task: *const HiplanTask,
    program: *const HiplanProgram,
    out: *mut *mut HiplanProgram,
) -> HiplanStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let (c, _) = canonicalize(&ref_arg(task, "task")?.0, &ref_arg(program, "program")?.0)?;
        *out = Box::into_raw(Box::new(HiplanProgram(c)));
        Ok(())
    })
}

/// Grammar-induction log prior.
///
/// # Safety
/// `program` must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_grammar_logprior(
    program: *const HiplanProgram,
    alpha: c_double,
    p_call: c_double,
    p_end: c_double,
    out: *mut c_double,
) -> HiplanStatus {
    guard(|| {
        let g = GrammarParams::new(alpha, p_call, p_end)?;
        *out_arg(out, "out")? = priors::grammar_logprior(&ref_arg(program, "program")?.0, &g)?;
        Ok(())
    })
}

/// Step-cost log prior (minus the number of executed steps).
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_step_cost_logprior(
    task: *const HiplanTask,
    program: *const HiplanProgram,
    out: *mut c_double,
) -> HiplanStatus {
    guard(|| {
        let v = priors::step_cost_logprior(&ref_arg(program, "program")?.0, &ref_arg(task, "task")?.0, Budget::default())?;
        *out_arg(out, "out")? = v;
        Ok(())
    })
}

/// MDL log prior (minus the program length).
///
/// # Safety
/// `program` must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hiplan_mdl_logprior(program: *const HiplanProgram, out: *mut c_double) -> HiplanStatus {
    guard(|| {
        *out_arg(out, "out")? = priors::mdl_logprior(&ref_arg(program, "program")?.0);
        Ok(())
    })
}

/// `k·ln n − 2·loglik`.
#[no_mangle]
pub extern "C" fn hiplan_bic(loglik: c_double, k: usize, n: usize) -> c_double {
    fitting::bic(loglik, k, n)
}

/// Likelihood-ratio statistic and its chi-square tail probability.
///
/// # Safety
/// `stat` and `p_value` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hiplan_lr_test(
    loglik_null: c_double,
    loglik_alt: c_double,
    df: usize,
    stat: *mut c_double,
    p_value: *mut c_double,
) -> HiplanStatus {
    guard(|| {
        if df == 0 {
            return Err(Failure(HiplanStatus::DomainError, "df must be positive".into()));
        }
        let (s, p) = fitting::lr_test(loglik_null, loglik_alt, df);
        *out_arg(stat, "stat")? = s;
        *out_arg(p_value, "p_value")? = p;
        Ok(())
    })
}

/// Jensen–Shannon divergence (natural log) of two distributions of length `len`.
///
/// # Safety
/// `p` and `q` must point to `len` doubles each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hiplan_js_divergence(
    p: *const c_double,
    q: *const c_double,
    len: usize,
    out: *mut c_double,
) -> HiplanStatus {
    guard(|| {
        if p.is_null() || q.is_null() {
            return Err(null("p/q"));
        }
        let (p, q) = (std::slice::from_raw_parts(p, len), std::slice::from_raw_parts(q, len));
        *out_arg(out, "out")? = fitting::js_divergence(p, q)?;
        Ok(())
    })
}
