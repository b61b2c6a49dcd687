//! Session data model and on-disk CSV schemas.
//!
//! A session directory holds `meta.csv`, `ecg.csv`, `device_hr.csv`,
//! `accel.csv`, `steps.csv` and `schedule.csv`, plus the optional
//! `device_pal.csv` and `device_hr_<name>.csv` for additional devices.
//! Report tables are written by the `write_*` functions.

mod csvio;
mod report;
mod session;

pub use csvio::{
    fmt_fixed, fmt_num, fmt_p, load_cohort, load_session, load_session_with, read_table, write_cohort,
    write_session, CsvWriter, Table, ACCEL_HEADER, DEVICE_HR_HEADER, DEVICE_PAL_HEADER, ECG_HEADER,
    META_HEADER, SCHEDULE_HEADER, STEPS_HEADER,
};
pub use report::{
    eval_csv, eval_header, eval_markdown, write_bland_altman_csv, write_device_table, write_grid_csv,
    write_pairwise_table, write_report, write_timeseries_csv, DeviceStateError, BLAND_ALTMAN_HEADER, DEVICE_HEADER,
    GRID_HEADER, PAIRWISE_HEADER,
};
pub use session::{
    ActivityState, DeviceStream, Gender, ParticipantProfile, ReportState, SampledSeries, Schedule,
    ScheduleEntry, SessionRecord, Source, TriaxialSeries, Unit, ValidationOptions,
};
