# Generated by Django 5.2.1 on 2026-10-17 09:12

import django.core.validators
import django.db.models.deletion
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='AgentRecord',
            fields=[
                ('record_id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('agent_id', models.PositiveIntegerField(unique=True)),
                ('payload', models.CharField(choices=[('depth', 'Depth image'), ('points', 'Point cloud')], default='depth', max_length=10)),
                ('metric', models.BooleanField(default=False)),
                ('is_origin', models.BooleanField(default=False)),
                ('width', models.PositiveIntegerField()),
                ('height', models.PositiveIntegerField()),
                ('fx', models.FloatField(validators=[django.core.validators.MinValueValidator(0)])),
                ('fy', models.FloatField(validators=[django.core.validators.MinValueValidator(0)])),
                ('cx', models.FloatField()),
                ('cy', models.FloatField()),
                ('semantic_dim', models.PositiveIntegerField(default=0)),
                ('state', models.CharField(choices=[('unaligned', 'Unaligned'), ('aligning', 'Aligning'), ('aligned', 'Aligned')], default='unaligned', max_length=10)),
                ('transform', models.JSONField(blank=True, help_text='Local-to-global Sim3 as [s, qw, qx, qy, qz, tx, ty, tz]', null=True)),
                ('frames_received', models.PositiveIntegerField(default=0)),
                ('cache_dropped', models.PositiveIntegerField(default=0)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['agent_id'],
            },
        ),
        migrations.CreateModel(
            name='EvaluationRecord',
            fields=[
                ('record_id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('run', models.UUIDField(db_index=True, help_text='Shared by all rows of one evaluation')),
                ('mode', models.CharField(choices=[('fusion', 'Fusion'), ('oracle', 'Oracle'), ('individuals', 'Individuals'), ('snapshot', 'Snapshot')], default='snapshot', max_length=12)),
                ('agent_id', models.PositiveIntegerField()),
                ('views', models.PositiveIntegerField(default=0)),
                ('psnr', models.FloatField(blank=True, null=True)),
                ('depth_l1', models.FloatField(blank=True, null=True)),
                ('translation_err', models.FloatField(blank=True, null=True)),
                ('rotation_err', models.FloatField(blank=True, null=True)),
                ('scale_err', models.FloatField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at', 'agent_id'],
                'unique_together': {('run', 'agent_id')},
            },
        ),
        migrations.CreateModel(
            name='AlignmentRecord',
            fields=[
                ('record_id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('anchor_id', models.PositiveIntegerField()),
                ('frame_i', models.PositiveBigIntegerField(blank=True, help_text='Anchor frame seq', null=True)),
                ('frame_j', models.PositiveBigIntegerField(blank=True, help_text='Agent frame seq', null=True)),
                ('stage1_translation', models.FloatField(blank=True, null=True)),
                ('stage1_rotation', models.FloatField(blank=True, null=True)),
                ('stage2_translation', models.FloatField(blank=True, null=True)),
                ('stage2_rotation', models.FloatField(blank=True, null=True)),
                ('gate_translation_m', models.FloatField(default=0.1)),
                ('gate_rotation_deg', models.FloatField(default=10.0)),
                ('accepted', models.BooleanField(default=False)),
                ('reason', models.CharField(blank=True, max_length=40)),
                ('transform', models.JSONField(blank=True, null=True)),
                ('created_at', models.DateTimeField()),
                ('agent', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='alignments', to='fusion.agentrecord')),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
