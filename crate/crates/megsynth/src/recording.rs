use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Rest,
    Visual,
    Auditory,
}

impl TaskType {
    pub const ALL: [TaskType; 3] = [TaskType::Rest, TaskType::Visual, TaskType::Auditory];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskType::Rest => "rest",
            TaskType::Visual => "visual",
            TaskType::Auditory => "auditory",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// `C × T` samples, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub data: Vec<f32>,
    pub channels: usize,
    pub fs: f32,
    pub session_id: String,
    pub subject_id: String,
    pub task: TaskType,
}

impl Recording {
    pub fn samples(&self) -> usize {
        self.data.len() / self.channels.max(1)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.fs as f64
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let t = self.samples();
        &self.data[c * t..(c + 1) * t]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let t = self.samples();
        &mut self.data[c * t..(c + 1) * t]
    }

    /// Samples `start..start+len` of every channel, metadata kept.
    pub fn slice(&self, start: usize, len: usize) -> Recording {
        let mut data = Vec::with_capacity(self.channels * len);
        for c in 0..self.channels {
            data.extend_from_slice(&self.channel(c)[start..start + len]);
        }
        Recording {
            data,
            ..self.meta_only()
        }
    }

    /// Same metadata, no samples.
    pub fn meta_only(&self) -> Recording {
        Recording {
            data: Vec::new(),
            channels: self.channels,
            fs: self.fs,
            session_id: self.session_id.clone(),
            subject_id: self.subject_id.clone(),
            task: self.task,
        }
    }

    /// Channel rows as `f64` vectors.
    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.channels)
            .map(|c| self.channel(c).iter().map(|&v| v as f64).collect())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
