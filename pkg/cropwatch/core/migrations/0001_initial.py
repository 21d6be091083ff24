from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='RunRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=50)),
                ('seed', models.CharField(max_length=20)),
                ('config_digest', models.CharField(max_length=16)),
                ('output_dir', models.CharField(max_length=500)),
                ('input_digests', models.JSONField(blank=True, default=dict)),
                ('output_digests', models.JSONField(blank=True, default=dict)),
                ('wall_time_seconds', models.FloatField(default=0.0)),
                ('status', models.CharField(choices=[('SUCCESS', 'Success'), ('FAILED', 'Failed')], default='SUCCESS', max_length=20)),
                ('message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['command', 'created_at'], name='core_runrec_command_5b8f1e_idx'), models.Index(fields=['config_digest'], name='core_runrec_config__a41c2d_idx')],
            },
        ),
    ]
